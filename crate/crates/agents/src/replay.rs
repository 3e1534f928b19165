//! FIFO replay buffer with uniform sampling.
//!
//! Trace frames are stored as 8-bit images and shared between consecutive
//! observations of an episode, so a stack of `n` frames costs one new frame
//! per step.

use std::collections::HashMap;
use std::sync::Arc;

use pulsectl_core::env::Observation;
use pulsectl_core::frog::quantize;
use rand::Rng;

use crate::checkpoint::{Checkpoint, Tensor};
use crate::error::{AgentError, Result};

/// An observation as kept in replay: quantised frames (oldest first) and the
/// low-dimensional vector part.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredObs {
    pub frames: Vec<Arc<[u8]>>,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: StoredObs,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: StoredObs,
    /// Physical termination (never set by time limits).
    pub done: bool,
    /// Privileged latent, read only by asymmetric critics.
    pub latent_b: f64,
}

/// Converts observations to [`StoredObs`], reusing frame allocations shared
/// with the previously interned observation.
#[derive(Debug, Clone, Default)]
pub struct FrameInterner {
    last: Vec<Arc<[u8]>>,
}

impl FrameInterner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, obs: &Observation) -> StoredObs {
        let mut frames: Vec<Arc<[u8]>> = Vec::with_capacity(obs.traces.len());
        for t in &obs.traces {
            let bytes: Vec<u8> = t.pixels.iter().map(|&v| quantize(v)).collect();
            let shared = frames.iter().rev().chain(self.last.iter().rev()).find(|f| f[..] == bytes[..]).cloned();
            frames.push(shared.unwrap_or_else(|| Arc::from(bytes)));
        }
        self.last = frames.clone();
        StoredObs { frames, vector: obs.vector() }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(AgentError::Config("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::new(), head: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Append, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (a, b) = self.items.split_at(self.head);
        b.iter().chain(a.iter())
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(AgentError::Replay("cannot sample from an empty buffer".into()));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }

    /// Store all transitions under `prefix.*`, oldest first. Shared frames
    /// are written once.
    pub fn save(&self, prefix: &str, ckpt: &mut Checkpoint) {
        let n = self.items.len();
        let stack = self.items.first().map_or(0, |t| t.obs.frames.len());
        let frame_len = self.items.first().and_then(|t| t.obs.frames.first()).map_or(0, |f| f.len());
        let dv = self.items.first().map_or(0, |t| t.obs.vector.len());
        let da = self.items.first().map_or(0, |t| t.action.len());

        let mut ids: HashMap<*const u8, u64> = HashMap::new();
        let mut frames: Vec<u8> = Vec::new();
        let mut id_of = |f: &Arc<[u8]>| -> u64 {
            let next = ids.len() as u64;
            *ids.entry(f.as_ptr()).or_insert_with(|| {
                frames.extend_from_slice(f);
                next
            })
        };
        let mut obs_ids = Vec::with_capacity(n * stack);
        let mut next_ids = Vec::with_capacity(n * stack);
        let (mut obs_vec, mut next_vec, mut action) = (Vec::new(), Vec::new(), Vec::new());
        let (mut reward, mut done, mut latent) = (Vec::new(), Vec::new(), Vec::new());
        for t in self.iter() {
            obs_ids.extend(t.obs.frames.iter().map(&mut id_of));
            next_ids.extend(t.next_obs.frames.iter().map(&mut id_of));
            obs_vec.extend_from_slice(&t.obs.vector);
            next_vec.extend_from_slice(&t.next_obs.vector);
            action.extend_from_slice(&t.action);
            reward.push(t.reward);
            done.push(t.done as u8);
            latent.push(t.latent_b);
        }
        let n_frames = ids.len();
        ckpt.insert(format!("{prefix}.frames"), Tensor::u8(vec![n_frames, frame_len], frames));
        ckpt.insert(format!("{prefix}.obs_frames"), Tensor::u64(vec![n, stack], obs_ids));
        ckpt.insert(format!("{prefix}.next_frames"), Tensor::u64(vec![n, stack], next_ids));
        ckpt.insert(format!("{prefix}.obs_vec"), Tensor::f64(vec![n, dv], obs_vec));
        ckpt.insert(format!("{prefix}.next_vec"), Tensor::f64(vec![n, dv], next_vec));
        ckpt.insert(format!("{prefix}.action"), Tensor::f64(vec![n, da], action));
        ckpt.insert(format!("{prefix}.reward"), Tensor::f64(vec![n], reward));
        ckpt.insert(format!("{prefix}.done"), Tensor::u8(vec![n], done));
        ckpt.insert(format!("{prefix}.latent"), Tensor::f64(vec![n], latent));
    }

    pub fn load(prefix: &str, capacity: usize, ckpt: &Checkpoint) -> Result<Self> {
        let frames_t = ckpt.get(&format!("{prefix}.frames"))?;
        let frame_len = frames_t.shape.get(1).copied().unwrap_or(0);
        let frame_bytes = ckpt.u8s(&format!("{prefix}.frames"))?;
        let frames: Vec<Arc<[u8]>> =
            if frame_len == 0 { Vec::new() } else { frame_bytes.chunks_exact(frame_len).map(Arc::from).collect() };
        let shape = &ckpt.get(&format!("{prefix}.obs_frames"))?.shape;
        let (n, stack) = (shape[0], shape[1]);
        let obs_ids = ckpt.u64s(&format!("{prefix}.obs_frames"))?;
        let next_ids = ckpt.u64s(&format!("{prefix}.next_frames"))?;
        let dv = ckpt.get(&format!("{prefix}.obs_vec"))?.shape[1];
        let da = ckpt.get(&format!("{prefix}.action"))?.shape[1];
        let obs_vec = ckpt.f64s(&format!("{prefix}.obs_vec"))?;
        let next_vec = ckpt.f64s(&format!("{prefix}.next_vec"))?;
        let action = ckpt.f64s(&format!("{prefix}.action"))?;
        let reward = ckpt.f64s(&format!("{prefix}.reward"))?;
        let done = ckpt.u8s(&format!("{prefix}.done"))?;
        let latent = ckpt.f64s(&format!("{prefix}.latent"))?;
        if reward.len() != n || done.len() != n || latent.len() != n {
            return Err(AgentError::Checkpoint("replay tensors disagree on length".into()));
        }
        let frame = |id: u64| -> Result<Arc<[u8]>> {
            frames
                .get(id as usize)
                .cloned()
                .ok_or_else(|| AgentError::Checkpoint(format!("replay frame id {id} out of range")))
        };
        let mut buf = Self::new(capacity)?;
        for i in 0..n {
            let obs_frames = obs_ids[i * stack..(i + 1) * stack].iter().map(|&id| frame(id)).collect::<Result<_>>()?;
            let next_frames =
                next_ids[i * stack..(i + 1) * stack].iter().map(|&id| frame(id)).collect::<Result<_>>()?;
            buf.push(Transition {
                obs: StoredObs { frames: obs_frames, vector: obs_vec[i * dv..(i + 1) * dv].to_vec() },
                action: action[i * da..(i + 1) * da].to_vec(),
                reward: reward[i],
                next_obs: StoredObs { frames: next_frames, vector: next_vec[i * dv..(i + 1) * dv].to_vec() },
                done: done[i] != 0,
                latent_b: latent[i],
            });
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pulsectl_core::frog::FrogTrace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trace(v: f64) -> FrogTrace {
        FrogTrace { size: 2, pixels: vec![v, 0.0, 1.0, v], delay_span: 1.0, freq_span: 1.0 }
    }

    fn transition(i: usize) -> Transition {
        let s = StoredObs { frames: vec![], vector: vec![i as f64] };
        Transition { obs: s.clone(), action: vec![0.0], reward: i as f64, next_obs: s, done: false, latent_b: 0.0 }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            buf.push(transition(i));
        }
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            buf.push(transition(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = 1_000_000;
        let mut counts = [0usize; 10];
        for i in buf.sample_indices(draws, &mut rng).unwrap() {
            counts[i] += 1;
        }
        let p = 0.1;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn interner_shares_frames_between_steps() {
        let mut it = FrameInterner::new();
        let o1 = Observation { traces: vec![trace(0.1), trace(0.2)], psi_norm: vec![0.0], prev_action: vec![0.0] };
        let o2 = Observation { traces: vec![trace(0.2), trace(0.3)], psi_norm: vec![0.0], prev_action: vec![0.0] };
        let a = it.intern(&o1);
        let b = it.intern(&o2);
        assert!(Arc::ptr_eq(&a.frames[1], &b.frames[0]));
        assert_eq!(&b.frames[1][..], &[quantize(0.3), 0, 255, quantize(0.3)]);
    }

    #[test]
    fn checkpoint_round_trip_preserves_order_and_sharing() {
        let mut it = FrameInterner::new();
        let mut buf = ReplayBuffer::new(4).unwrap();
        let mut prev = it.intern(&Observation {
            traces: vec![trace(0.0), trace(0.0)],
            psi_norm: vec![0.5],
            prev_action: vec![0.0],
        });
        for i in 1..7 {
            let next = it.intern(&Observation {
                traces: vec![trace((i - 1) as f64 / 10.0), trace(i as f64 / 10.0)],
                psi_norm: vec![i as f64],
                prev_action: vec![-0.5],
            });
            buf.push(Transition {
                obs: prev,
                action: vec![0.1 * i as f64],
                reward: i as f64,
                next_obs: next.clone(),
                done: i == 6,
                latent_b: 2.0,
            });
            prev = next;
        }
        let mut ckpt = Checkpoint::new(serde_json::json!({}));
        buf.save("replay", &mut ckpt);
        assert_eq!(ckpt.get("replay.frames").unwrap().shape[0], 6);
        let back =
            ReplayBuffer::load("replay", 4, &Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap()).unwrap();
        let a: Vec<_> = buf.iter().cloned().collect();
        let b: Vec<_> = back.iter().cloned().collect();
        assert_eq!(a, b);
        let first = back.iter().next().unwrap();
        let second = back.iter().nth(1).unwrap();
        assert!(Arc::ptr_eq(&first.next_obs.frames[1], &second.obs.frames[1]));
    }
}
