use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::data::{sample_seed, Image};
use crate::error::{shape_err, Error, Result};

/// Seekable batch source for one domain.
pub trait BatchSource {
    /// Batch for 1-based training step `step`, as `[n, 3, R, R]` in `[-1,1]`.
    fn batch(&mut self, step: u64, n: usize) -> Result<Tensor>;
    fn resolution(&self) -> usize;
}

/// Images of one domain, reshuffled every epoch by a permutation that
/// depends only on `(seed, stream id, epoch)`. The batch for any step can be
/// produced without replaying earlier steps.
pub struct ShuffledStream {
    items: Vec<Vec<f64>>,
    resolution: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl ShuffledStream {
    /// `stream_id` keeps the two domains on unrelated orders.
    pub fn new(images: &[Image], seed: u64, stream_id: u64) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("domain stream needs at least one image".into()))?;
        if first.width() != first.height() {
            return Err(shape_err!(
                "training images must be square, got {}x{}",
                first.width(),
                first.height()
            ));
        }
        for img in images {
            first.same_dims(img)?;
        }
        Ok(Self {
            items: images.iter().map(Image::to_signed_chw).collect(),
            resolution: first.width(),
            seed: sample_seed(seed, stream_id),
            cached: None,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn order(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..self.items.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(self.seed, epoch)));
            self.cached = Some((epoch, perm));
        }
        &self.cached.as_ref().expect("just filled").1
    }
}

impl BatchSource for ShuffledStream {
    fn batch(&mut self, step: u64, n: usize) -> Result<Tensor> {
        if step == 0 || n == 0 {
            return Err(Error::InvalidArgument("steps are 1-based and batches non-empty".into()));
        }
        let len = self.items.len() as u64;
        let r = self.resolution;
        let mut data = Vec::with_capacity(n * 3 * r * r);
        let start = (step - 1) * n as u64;
        for pos in start..start + n as u64 {
            let idx = self.order(pos / len)[(pos % len) as usize];
            data.extend_from_slice(&self.items[idx]);
        }
        Tensor::new(vec![n, 3, r, r], data)
    }

    fn resolution(&self) -> usize {
        self.resolution
    }
}
