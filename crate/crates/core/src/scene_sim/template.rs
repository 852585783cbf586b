use super::{ActionKind, ActionScript, Widget};

/// Ground-truth caption for `script` acting on `widget`.
///
/// * clicks: `"<Action> on <label> <kind>"`
/// * typing: `"Type '<text>' in <label> <kind>"`
/// * drags:  `"Drag the <label> from <start> to <end> to <purpose>"`
pub fn caption_template(widget: &Widget, script: &ActionScript) -> String {
    let kind = widget.kind.as_str();
    match script.action {
        ActionKind::LeftClick | ActionKind::RightClick | ActionKind::DoubleClick => {
            format!("{} on {} {}", script.action.caption_name(), widget.label, kind)
        }
        ActionKind::Type => format!(
            "Type '{}' in {} {}",
            script.typed_text.as_deref().unwrap_or_default(),
            widget.label,
            kind
        ),
        ActionKind::Drag => format!(
            "Drag the {} from {} to {} to {}",
            widget.label,
            script.drag_from.as_deref().unwrap_or_default(),
            script.drag_to.as_deref().unwrap_or_default(),
            script.purpose.as_deref().unwrap_or_default()
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::scene_sim::WidgetKind;

    fn widget(label: &str, kind: WidgetKind) -> Widget {
        Widget {
            id: "w".into(),
            label: label.into(),
            kind,
            rect: Rect::new(0, 0, 10, 10),
        }
    }

    #[test]
    fn click_template() {
        let s = ActionScript::click(ActionKind::LeftClick, "w", 0);
        assert_eq!(
            caption_template(&widget("Export", WidgetKind::Button), &s),
            "Left-Click on Export button"
        );
    }

    #[test]
    fn drag_template() {
        let s = ActionScript::drag("w", "timeline start", "timeline end", "extend the clip", 0);
        assert_eq!(
            caption_template(&widget("keyframe marker", WidgetKind::Handle), &s),
            "Drag the keyframe marker from timeline start to timeline end to extend the clip"
        );
    }

    #[test]
    fn type_template() {
        let s = ActionScript::type_text("w", "hello", 0);
        assert_eq!(
            caption_template(&widget("search box", WidgetKind::TextField), &s),
            "Type 'hello' in search box text_field"
        );
    }
}
