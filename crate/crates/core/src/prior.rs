//! Stored (state, network) pairs used to warm-start training on new LSGs.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::encoding::{similarity, Entry, MovingState};
use crate::qnet::{NetShape, QNetwork};
use crate::{Error, Result};

pub const DEFAULT_PRIOR_COUNT: usize = 10;

const MAGIC: &[u8; 4] = b"TPPS";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PriorEntry {
    pub state: MovingState,
    pub net: QNetwork,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorStore {
    capacity: usize,
    shape: NetShape,
    entries: Vec<PriorEntry>,
}

impl PriorStore {
    pub fn new(capacity: usize, shape: NetShape) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("prior store capacity must be at least 1".into()));
        }
        shape.validate()?;
        Ok(PriorStore {
            capacity,
            shape,
            entries: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PriorEntry] {
        &self.entries
    }

    /// Index and similarity of the stored state closest to `s`; ties go to
    /// the earliest entry.
    pub fn nearest(&self, s: &MovingState) -> Result<Option<(usize, f64)>> {
        let mut best: Option<(usize, f64)> = None;
        for (k, e) in self.entries.iter().enumerate() {
            let rho = similarity(s, &e.state)?;
            if best.is_none_or(|(_, b)| rho > b) {
                best = Some((k, rho));
            }
        }
        Ok(best)
    }

    /// Network to start training from: the nearest prior, or a fresh
    /// initialization when the store is empty.
    pub fn select_prior(&self, s: &MovingState, rng: &mut ChaCha8Rng) -> Result<QNetwork> {
        match self.nearest(s)? {
            Some((k, _)) => Ok(self.entries[k].net.clone()),
            None => QNetwork::init(self.shape, rng),
        }
    }

    /// Appends while below capacity. Otherwise the most similar pair among
    /// the stored and new states is found, and whichever member of it is
    /// more similar to the rest is dropped. Returns the evicted entry.
    pub fn insert_and_merge(&mut self, entry: PriorEntry) -> Result<Option<PriorEntry>> {
        if entry.state.m() != self.shape.m || entry.net.shape() != self.shape {
            return Err(Error::Argument(format!(
                "prior entry does not match the store dimension {}",
                self.shape.m
            )));
        }
        self.entries.push(entry);
        if self.entries.len() <= self.capacity {
            return Ok(None);
        }
        let n = self.entries.len();
        let mut rho = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in a + 1..n {
                let r = similarity(&self.entries[a].state, &self.entries[b].state)?;
                rho[a][b] = r;
                rho[b][a] = r;
            }
        }
        let mut pair = (0, 1);
        for a in 0..n {
            for b in a + 1..n {
                if rho[a][b] > rho[pair.0][pair.1] {
                    pair = (a, b);
                }
            }
        }
        let (a, b) = pair;
        let rest_max = |x: usize| {
            (0..n)
                .filter(|&k| k != a && k != b)
                .map(|k| rho[x][k])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let evict = if rest_max(a) > rest_max(b) { a } else { b };
        Ok(Some(self.entries.remove(evict)))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let s = self.shape;
        for v in [self.capacity, s.m, s.e2e1, s.e2e2, s.e2n, s.hidden, self.entries.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for e in &self.entries {
            w.write_all(&(e.state.occupied() as u64).to_le_bytes())?;
            for c in 0..3 {
                let ch = e.state.channel(c);
                w.write_all(&(ch.len() as u64).to_le_bytes())?;
                for &(i, j, v) in ch {
                    w.write_all(&i.to_le_bytes())?;
                    w.write_all(&j.to_le_bytes())?;
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            e.net.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::parse("prior header", "bad magic tag"));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != FORMAT_VERSION {
            return Err(Error::parse("prior header", format!("unsupported version {version}")));
        }
        let mut fields = [0usize; 7];
        for f in &mut fields {
            *f = read_u64(r)? as usize;
        }
        let shape = NetShape {
            m: fields[1],
            e2e1: fields[2],
            e2e2: fields[3],
            e2n: fields[4],
            hidden: fields[5],
        };
        let mut store = PriorStore::new(fields[0], shape).map_err(|e| Error::parse("prior header", e.to_string()))?;
        if fields[6] > store.capacity {
            return Err(Error::parse("prior header", "more entries than capacity"));
        }
        for k in 0..fields[6] {
            let occupied = read_u64(r)? as usize;
            let mut channels: [Vec<Entry>; 3] = Default::default();
            for ch in channels.iter_mut() {
                let count = read_u64(r)? as usize;
                if count > shape.m * shape.m {
                    return Err(Error::parse(format!("prior record {k}"), "entry count exceeds m²"));
                }
                for _ in 0..count {
                    let i = u32::from_le_bytes(read_array(r)?);
                    let j = u32::from_le_bytes(read_array(r)?);
                    let v = f64::from_le_bytes(read_array(r)?);
                    ch.push((i, j, v));
                }
            }
            let state = MovingState::from_entries(shape.m, occupied, channels)
                .map_err(|e| Error::parse(format!("prior record {k}"), e.to_string()))?;
            let net = QNetwork::read_from(r)?;
            if net.shape() != shape {
                return Err(Error::parse(format!("prior record {k}"), "network shape differs from header"));
            }
            store.entries.push(PriorEntry { state, net });
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::SIMILARITY_LAMBDA;
    use rand::SeedableRng;

    fn shape() -> NetShape {
        NetShape {
            m: 4,
            e2e1: 2,
            e2e2: 2,
            e2n: 2,
            hidden: 4,
        }
    }

    fn state(vals: &[f64]) -> MovingState {
        let pairs = [(0, 1), (0, 2), (1, 2), (2, 3)];
        let ch: Vec<Entry> = pairs.iter().zip(vals).map(|(&(i, j), &v)| (i, j, v)).collect();
        MovingState::from_entries(4, 4, [ch, vec![], vec![]]).unwrap()
    }

    fn entry(vals: &[f64], seed: u64) -> PriorEntry {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PriorEntry {
            state: state(vals),
            net: QNetwork::init(shape(), &mut rng).unwrap(),
        }
    }

    #[test]
    fn empty_store_gives_fresh_network() {
        let store = PriorStore::new(3, shape()).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let net = store.select_prior(&state(&[1.0; 4]), &mut a).unwrap();
        assert_eq!(net, QNetwork::init(shape(), &mut b).unwrap());
    }

    #[test]
    fn identical_state_is_selected() {
        let mut store = PriorStore::new(3, shape()).unwrap();
        store.insert_and_merge(entry(&[1.0, 0.0, 1.0, 0.0], 1)).unwrap();
        store.insert_and_merge(entry(&[0.5, 0.5, 0.5, 0.5], 2)).unwrap();
        let (k, rho) = store.nearest(&state(&[0.5, 0.5, 0.5, 0.5])).unwrap().unwrap();
        assert_eq!(k, 1);
        assert!((rho - 1.0 / SIMILARITY_LAMBDA).abs() < 1e-15);
    }

    #[test]
    fn closer_of_two_is_selected() {
        let mut store = PriorStore::new(3, shape()).unwrap();
        // The query differs from the first entry in one element pair by 0.9
        // and from the second by 0.2: distances sqrt(2)*0.9 and sqrt(2)*0.2.
        store.insert_and_merge(entry(&[0.1, 0.5, 0.5, 0.5], 1)).unwrap();
        store.insert_and_merge(entry(&[0.8, 0.5, 0.5, 0.5], 2)).unwrap();
        let q = state(&[1.0, 0.5, 0.5, 0.5]);
        let r0 = 1.0 / (SIMILARITY_LAMBDA * (1.0 + 2f64.sqrt() * 0.9));
        let r1 = 1.0 / (SIMILARITY_LAMBDA * (1.0 + 2f64.sqrt() * 0.2));
        assert!(r1 > r0);
        let (k, rho) = store.nearest(&q).unwrap().unwrap();
        assert_eq!(k, 1);
        assert!((rho - r1).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(store.select_prior(&q, &mut rng).unwrap(), store.entries()[1].net);
    }

    #[test]
    fn appends_below_capacity() {
        let mut store = PriorStore::new(10, shape()).unwrap();
        for k in 0..10 {
            let v = k as f64 / 10.0;
            assert!(store.insert_and_merge(entry(&[v, 0.0, 0.0, 0.0], k)).unwrap().is_none());
        }
        assert_eq!(store.len(), 10);
    }

    #[test]
    fn duplicate_in_full_store_is_evicted() {
        let mut store = PriorStore::new(3, shape()).unwrap();
        store.insert_and_merge(entry(&[1.0, 0.0, 0.0, 0.0], 1)).unwrap();
        store.insert_and_merge(entry(&[0.0, 1.0, 0.0, 0.0], 2)).unwrap();
        store.insert_and_merge(entry(&[0.0, 0.0, 1.0, 0.0], 3)).unwrap();
        let gone = store.insert_and_merge(entry(&[0.0, 1.0, 0.0, 0.0], 4)).unwrap().unwrap();
        assert_eq!(gone.state, state(&[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(store.len(), 3);
        let kept: Vec<_> = store.entries().iter().filter(|e| e.state == gone.state).collect();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn hand_traced_two_slot_merge() {
        // Single-pair states with values 0, 0.3 and 1.0 (entry appears twice
        // in the symmetric matrix, so distance = sqrt(2)*|dv|).
        // Pairwise distances: (0,1) 0.424, (0,2) 1.414, (1,2) 0.990.
        // Most similar pair is (0,1). Against the remaining state 2:
        // state 0 is at 1.414, state 1 at 0.990, so state 1 is more similar
        // to the rest and is evicted.
        let mut store = PriorStore::new(2, shape()).unwrap();
        store.insert_and_merge(entry(&[0.0, 0.0, 0.0, 0.0], 1)).unwrap();
        store.insert_and_merge(entry(&[0.3, 0.0, 0.0, 0.0], 2)).unwrap();
        let gone = store.insert_and_merge(entry(&[1.0, 0.0, 0.0, 0.0], 3)).unwrap().unwrap();
        assert_eq!(gone.state, state(&[0.3, 0.0, 0.0, 0.0]));
        let left: Vec<_> = store.entries().iter().map(|e| e.state.clone()).collect();
        assert_eq!(left, vec![state(&[0.0; 4]), state(&[1.0, 0.0, 0.0, 0.0])]);
    }

    #[test]
    fn evicted_entry_belongs_to_most_similar_pair() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = PriorStore::new(4, shape()).unwrap();
        for k in 0..30 {
            let vals: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let before: Vec<MovingState> = store.entries().iter().map(|e| e.state.clone()).collect();
            let new_state = state(&vals);
            let gone = store.insert_and_merge(entry(&vals, k)).unwrap();
            assert!(store.len() <= 4);
            if let Some(g) = gone {
                let mut all = before.clone();
                all.push(new_state.clone());
                let mut best = f64::NEG_INFINITY;
                let mut members = Vec::new();
                for a in 0..all.len() {
                    for b in a + 1..all.len() {
                        let r = similarity(&all[a], &all[b]).unwrap();
                        if r > best {
                            best = r;
                            members = vec![all[a].clone(), all[b].clone()];
                        }
                    }
                }
                assert!(members.contains(&g.state));
            }
        }
    }

    #[test]
    fn mismatched_entry_rejected() {
        let mut store = PriorStore::new(2, shape()).unwrap();
        let mut e = entry(&[1.0; 4], 0);
        e.state = MovingState::from_entries(5, 2, Default::default()).unwrap();
        assert!(store.insert_and_merge(e).is_err());
        assert!(PriorStore::new(0, shape()).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let mut store = PriorStore::new(3, shape()).unwrap();
        store.insert_and_merge(entry(&[1.0, 0.25, 0.0, 0.5], 1)).unwrap();
        store.insert_and_merge(entry(&[0.0, 0.75, 1.0, 0.5], 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("priors.bin");
        store.save(&path).unwrap();
        assert_eq!(PriorStore::load(&path).unwrap(), store);
        let bytes = std::fs::read(&path).unwrap();
        assert!(PriorStore::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
        assert!(PriorStore::read_from(&mut &b"XXXX"[..]).is_err());
    }
}
