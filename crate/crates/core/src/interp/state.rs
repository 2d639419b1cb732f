use std::collections::BTreeMap;

use crate::graph::NodeId;
use crate::tensor::{Buffer, Shape, TensorValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub node: NodeId,
    pub kind: AccessKind,
    pub name: String,
}

/// Named mutable tensors plus an ordered log of every access.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariableStore {
    values: BTreeMap<String, TensorValue>,
    log: Vec<Access>,
}

impl VariableStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store seeded from a graph's declared initial values.
    pub fn from_initial(vars: &BTreeMap<String, TensorValue>) -> Self {
        VariableStore { values: vars.clone(), log: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, v: TensorValue) {
        self.values.insert(name.into(), v);
    }

    pub fn get(&self, name: &str) -> Option<&TensorValue> {
        self.values.get(name)
    }

    pub fn values(&self) -> &BTreeMap<String, TensorValue> {
        &self.values
    }

    pub fn log(&self) -> &[Access] {
        &self.log
    }

    pub fn clear_log(&mut self) {
        self.log.clear();
    }

    pub(crate) fn read(&mut self, node: NodeId, name: &str) -> Option<TensorValue> {
        let v = self.values.get(name)?.clone();
        self.log.push(Access { node, kind: AccessKind::Read, name: name.into() });
        Some(v)
    }

    /// Overwrite; the new value must keep the old dtype and shape.
    pub(crate) fn write(&mut self, node: NodeId, name: &str, v: TensorValue) -> Result<(), String> {
        let slot = self.values.get_mut(name).ok_or_else(|| format!("unknown variable {name:?}"))?;
        if slot.dtype() != v.dtype() || slot.shape() != v.shape() {
            return Err(format!(
                "variable {name:?} is {}{}, cannot store {}{}",
                slot.dtype(),
                slot.shape(),
                v.dtype(),
                v.shape()
            ));
        }
        *slot = v;
        self.log.push(Access { node, kind: AccessKind::Write, name: name.into() });
        Ok(())
    }
}

/// Counter-based uniform generator: draw `d` is a pure function of
/// `(seed, counter_d)` and the counter moves by one per draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    /// Element `k` of draw with counter `c`, in `[0, 1)`.
    pub fn element(seed: u64, counter: u64, k: u64) -> f64 {
        let h = splitmix64(splitmix64(splitmix64(seed) ^ counter) ^ k);
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn draw(&mut self, shape: &Shape) -> TensorValue {
        let c = self.counter;
        self.counter += 1;
        let data = (0..shape.numel() as u64).map(|k| Self::element(self.seed, c, k)).collect();
        TensorValue::new(shape.clone(), Buffer::F64(data)).expect("length matches shape")
    }
}

/// Sorted, distinct iteration indices still executing a block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn full(n: usize) -> Self {
        ActiveSet((0..n).collect())
    }

    pub fn from_sorted(v: Vec<usize>) -> Self {
        debug_assert!(v.windows(2).all(|w| w[0] < w[1]));
        ActiveSet(v)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Split by a per-member flag into (true, false) sets. Positions are
    /// into `self`, the returned sets hold the members themselves.
    pub fn partition(&self, flags: &[bool]) -> (ActiveSet, ActiveSet) {
        let (mut t, mut f) = (Vec::new(), Vec::new());
        for (&i, &b) in self.0.iter().zip(flags) {
            if b {
                t.push(i)
            } else {
                f.push(i)
            }
        }
        (ActiveSet(t), ActiveSet(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_deterministic_and_advance() {
        let mut a = RngState::new(7);
        let mut b = RngState::new(7);
        let s = Shape::new([3, 2]);
        assert_eq!(a.draw(&s), b.draw(&s));
        assert_eq!(a.counter, 1);
        let e = a.draw(&Shape::new([0]));
        assert_eq!(e.numel(), 0);
        assert_eq!(a.counter, 2);
        let x = a.draw(&Shape::new([1000]));
        assert!(x.as_f64().unwrap().iter().all(|v| (0.0..1.0).contains(v)));
        assert_ne!(x, b.draw(&Shape::new([1000])));
    }

    #[test]
    fn partition_is_disjoint_cover() {
        let s = ActiveSet::from_sorted(vec![1, 3, 4, 8]);
        let (t, f) = s.partition(&[true, false, false, true]);
        assert_eq!(t.indices(), &[1, 8]);
        assert_eq!(f.indices(), &[3, 4]);
    }

    #[test]
    fn write_keeps_shape() {
        let mut st = VariableStore::new();
        st.insert("v", TensorValue::scalar_f64(1.0));
        assert!(st.write(NodeId(0), "v", TensorValue::vec_f64(vec![1.0])).is_err());
        st.write(NodeId(0), "v", TensorValue::scalar_f64(2.0)).unwrap();
        assert_eq!(st.read(NodeId(1), "v"), Some(TensorValue::scalar_f64(2.0)));
        assert_eq!(st.log().len(), 2);
    }
}
