//! Gated recurrent unit, with the reset gate applied to the state before the
//! candidate's recurrent matmul:
//!
//! ```text
//! z  = sigmoid(W_z x + U_z h + b_z)
//! r  = sigmoid(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r * h) + b_n)
//! h' = z * h + (1 - z) * n
//! ```

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::tensor::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Half-width of the uniform initialization range.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruCell {
    pub d_in: usize,
    pub hidden: usize,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_n: ParamId,
}

/// Cell parameters bound into one graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    w_z: NodeId,
    u_z: NodeId,
    b_z: NodeId,
    w_r: NodeId,
    u_r: NodeId,
    b_r: NodeId,
    w_n: NodeId,
    u_n: NodeId,
    b_n: NodeId,
}

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w = |name: &str, cols: usize| {
            store.add_uniform(format!("{prefix}.{name}"), vec![hidden, cols], INIT_RANGE, rng)
        };
        let (w_z, u_z) = (w("w_z", d_in), w("u_z", hidden));
        let (w_r, u_r) = (w("w_r", d_in), w("u_r", hidden));
        let (w_n, u_n) = (w("w_n", d_in), w("u_n", hidden));
        let mut b = |name: &str| store.add_uniform(format!("{prefix}.{name}"), vec![hidden], INIT_RANGE, rng);
        let (b_z, b_r, b_n) = (b("b_z"), b("b_r"), b("b_n"));
        Self { d_in, hidden, w_z, u_z, b_z, w_r, u_r, b_r, w_n, u_n, b_n }
    }

    /// Re-attaches a cell to tensors already present in `store` (e.g. after
    /// loading a checkpoint).
    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |name: &str| {
            store
                .find(&format!("{prefix}.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {prefix}.{name}")))
        };
        let w_z = get("w_z")?;
        let shape = store.get(w_z).matrix_shape();
        let (hidden, d_in) = shape;
        let cell = Self {
            d_in,
            hidden,
            w_z,
            u_z: get("u_z")?,
            b_z: get("b_z")?,
            w_r: get("w_r")?,
            u_r: get("u_r")?,
            b_r: get("b_r")?,
            w_n: get("w_n")?,
            u_n: get("u_n")?,
            b_n: get("b_n")?,
        };
        cell.check_shapes(store)?;
        Ok(cell)
    }

    fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        let (h, d) = (self.hidden, self.d_in);
        let expect = [
            (self.w_z, (h, d)),
            (self.w_r, (h, d)),
            (self.w_n, (h, d)),
            (self.u_z, (h, h)),
            (self.u_r, (h, h)),
            (self.u_n, (h, h)),
            (self.b_z, (h, 1)),
            (self.b_r, (h, 1)),
            (self.b_n, (h, 1)),
        ];
        for (id, shape) in expect {
            let t = store.get(id);
            if t.matrix_shape() != shape {
                return Err(Error::dims(format!(
                    "GRU tensor {} has shape {:?}, expected {:?}",
                    t.name, t.shape, shape
                )));
            }
        }
        Ok(())
    }

    pub fn param_ids(&self) -> [ParamId; 9] {
        [self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_n, self.u_n, self.b_n]
    }

    pub fn bind<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore) -> BoundGru {
        BoundGru {
            w_z: g.param(store, self.w_z),
            u_z: g.param(store, self.u_z),
            b_z: g.param(store, self.b_z),
            w_r: g.param(store, self.w_r),
            u_r: g.param(store, self.u_r),
            b_r: g.param(store, self.b_r),
            w_n: g.param(store, self.w_n),
            u_n: g.param(store, self.u_n),
            b_n: g.param(store, self.b_n),
        }
    }
}

impl BoundGru {
    fn gate(g: &mut Graph<'_>, w: NodeId, x: NodeId, u: NodeId, h: NodeId, b: NodeId) -> Result<NodeId> {
        let wx = g.matmul(w, x)?;
        let uh = g.matmul(u, h)?;
        let s = g.add(wx, uh)?;
        g.add(s, b)
    }

    pub fn step(&self, g: &mut Graph<'_>, x: NodeId, h: NodeId) -> Result<NodeId> {
        let z_pre = Self::gate(g, self.w_z, x, self.u_z, h, self.b_z)?;
        let z = g.sigmoid(z_pre);
        let r_pre = Self::gate(g, self.w_r, x, self.u_r, h, self.b_r)?;
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h)?;
        let n_pre = Self::gate(g, self.w_n, x, self.u_n, rh, self.b_n)?;
        let n = g.tanh(n_pre);
        // h' = n + z * (h - n)
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }
}

/// One recurrence step on plain vectors.
pub fn gru_step(store: &ParamStore, cell: &GruCell, input: &[f64], state: &[f64]) -> Result<Vec<f64>> {
    if input.len() != cell.d_in || state.len() != cell.hidden {
        return Err(Error::dims(format!(
            "GRU expects input {} and state {}, got {} and {}",
            cell.d_in,
            cell.hidden,
            input.len(),
            state.len()
        )));
    }
    let mut g = Graph::new();
    let bound = cell.bind(&mut g, store);
    let x = g.constant_slice(input);
    let h = g.constant_slice(state);
    let out = bound.step(&mut g, x, h)?;
    Ok(g.value(out).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_cell(vals: [f64; 9]) -> (ParamStore, GruCell) {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        for (id, v) in cell.param_ids().into_iter().zip(vals) {
            store.get_mut(id).data = vec![v];
        }
        (store, cell)
    }

    #[test]
    fn zero_params_zero_state() {
        let (store, cell) = scalar_cell([0.0; 9]);
        assert_eq!(gru_step(&store, &cell, &[0.7], &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn scalar_hand_calculation() {
        // order: w_z u_z b_z w_r u_r b_r w_n u_n b_n
        let (store, cell) = scalar_cell([0.5, -0.3, 0.1, 0.2, 0.4, -0.1, 0.9, 0.6, 0.05]);
        let (x, h) = (0.8f64, -0.4f64);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sig(0.5 * x - 0.3 * h + 0.1);
        let r = sig(0.2 * x + 0.4 * h - 0.1);
        let n = (0.9 * x + 0.6 * (r * h) + 0.05).tanh();
        let expect = z * h + (1.0 - z) * n;
        let got = gru_step(&store, &cell, &[x], &[h]).unwrap();
        assert!((got[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn output_dim_and_bounds() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = GruCell::new(&mut store, "g", 5, 3, &mut rng);
        let out = gru_step(&store, &cell, &[1.0, -2.0, 3.0, 0.5, 9.0], &[0.9, -0.9, 0.0]).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|v| v.abs() < 1.0));
        assert!(gru_step(&store, &cell, &[1.0], &[0.0; 3]).is_err());
    }

    #[test]
    fn reload_from_store() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "enc", 4, 2, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(GruCell::from_store(&store, "enc").unwrap(), cell);
        assert!(GruCell::from_store(&store, "dec").is_err());
    }
}
