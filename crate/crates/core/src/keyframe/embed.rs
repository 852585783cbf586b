use super::KeyframeError;
use crate::frame::Frame;
use crate::http::HttpClient;

/// Side of the grayscale grid the built-in embedder samples.
pub const EMBED_GRID: u32 = 16;

/// Maps a crop to a fixed-length vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, crop: &Frame) -> Result<Vec<f64>, KeyframeError>;
}

/// 16x16 area-averaged grayscale, mean-centred and scaled to unit length.
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelEmbedder;

impl EmbeddingProvider for PixelEmbedder {
    fn dim(&self) -> usize {
        (EMBED_GRID * EMBED_GRID) as usize
    }

    fn embed(&self, crop: &Frame) -> Result<Vec<f64>, KeyframeError> {
        Ok(embed(crop))
    }
}

/// Built-in embedding; a constant crop maps to the zero vector.
pub fn embed(crop: &Frame) -> Vec<f64> {
    let (w, h) = (crop.width(), crop.height());
    let span = |i: u32, len: u32| {
        let a = i * len / EMBED_GRID;
        let b = ((i + 1) * len / EMBED_GRID).max(a + 1).min(len);
        (a.min(len - 1), b)
    };
    let mut v = Vec::with_capacity((EMBED_GRID * EMBED_GRID) as usize);
    for gy in 0..EMBED_GRID {
        let (y0, y1) = span(gy, h);
        for gx in 0..EMBED_GRID {
            let (x0, x1) = span(gx, w);
            let mut sum = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let [r, g, b] = crop.image.get_pixel(x, y).0;
                    sum += 299 * r as u64 + 587 * g as u64 + 114 * b as u64;
                }
            }
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            v.push(sum as f64 / (1000.0 * count));
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-9 {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Embeddings from an HTTP service: PNG body in, newline-separated floats out.
pub struct RemoteEmbedder {
    url: String,
    dim: usize,
    client: HttpClient,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, dim: usize, client: HttpClient) -> Self {
        Self {
            url: url.into(),
            dim,
            client,
        }
    }
}

pub(crate) fn parse_embedding(body: &str, dim: usize) -> Result<Vec<f64>, KeyframeError> {
    let v: Vec<f64> = body
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|_| KeyframeError::BadReply(format!("not a number: {l:?}"))))
        .collect::<Result<_, _>>()?;
    if v.len() != dim {
        return Err(KeyframeError::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(KeyframeError::NonFinite);
    }
    Ok(v)
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, crop: &Frame) -> Result<Vec<f64>, KeyframeError> {
        let reply = self.client.post(&self.url, "image/png", &crop.to_png_bytes()?)?;
        parse_embedding(&reply, self.dim)
    }
}
