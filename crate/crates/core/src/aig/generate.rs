use rand::seq::index;
use rand::Rng;

use super::{Aig, AndGate, Fanin, TruthTable};
use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 10_000;

/// Random circuit plus its exact truth table.
///
/// Draws an AND count uniformly from `1..=3 * max_ands`, grows the gates one
/// at a time with two distinct uniformly chosen children and fair-coin
/// polarities, wires each output to a still-unused AND when one exists
/// (otherwise to any non-output node), prunes floating gates and rejects
/// circuits that end up with more than `max_gates` gates in total.
pub fn random_aig<R: Rng + ?Sized>(n_in: usize, n_out: usize, max_gates: usize, rng: &mut R) -> Result<(Aig, TruthTable)> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::InfeasibleBounds(format!(
            "need at least one input and one output (got {n_in}, {n_out})"
        )));
    }
    if max_gates < n_in + n_out {
        return Err(Error::InfeasibleBounds(format!(
            "max_gates {max_gates} < n_in + n_out = {}",
            n_in + n_out
        )));
    }
    let max_ands = max_gates - n_in - n_out;
    // a single input cannot feed an AND with two distinct children
    let max_ands = if n_in < 2 { 0 } else { max_ands };
    for _ in 0..MAX_ATTEMPTS {
        let aig = grow(n_in, n_out, max_ands, rng)?;
        if aig.ands().len() <= max_ands {
            let tt = aig.simulate()?;
            return Ok((aig, tt));
        }
    }
    Err(Error::InfeasibleBounds(format!(
        "no circuit with at most {max_gates} gates after {MAX_ATTEMPTS} attempts"
    )))
}

fn grow<R: Rng + ?Sized>(n_in: usize, n_out: usize, max_ands: usize, rng: &mut R) -> Result<Aig> {
    let k = if max_ands == 0 { 0 } else { rng.gen_range(1..=3 * max_ands) };
    let mut ands = Vec::with_capacity(k);
    let mut used = vec![false; n_in + k];
    for g in 0..k {
        let pool = n_in + g;
        let pick = index::sample(rng, pool, 2);
        let (a, b) = (pick.index(0), pick.index(1));
        used[a] = true;
        used[b] = true;
        ands.push(AndGate {
            a: Fanin::new(a, rng.gen_bool(0.5)),
            b: Fanin::new(b, rng.gen_bool(0.5)),
        });
    }
    let pool = n_in + k;
    let mut outputs = Vec::with_capacity(n_out);
    for _ in 0..n_out {
        let roots: Vec<usize> = (n_in..pool).filter(|&id| !used[id]).collect();
        let child = if roots.is_empty() {
            rng.gen_range(0..pool)
        } else {
            roots[rng.gen_range(0..roots.len())]
        };
        used[child] = true;
        outputs.push(Fanin::new(child, rng.gen_bool(0.5)));
    }
    let raw = Aig::with_natural_levels(n_in, 0, ands, outputs)?;
    Ok(raw.remove_floating().canonicalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aig::aig_validity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounds_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_aig(0, 1, 5, &mut rng).is_err());
        assert!(random_aig(3, 1, 3, &mut rng).is_err());
        let (aig, _) = random_aig(1, 1, 5, &mut rng).unwrap();
        assert!(aig.ands().is_empty());
    }

    #[test]
    fn generated_circuits_are_valid_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (aig, tt) = random_aig(3, 1, 10, &mut rng).unwrap();
            assert!(aig.node_count() <= 10);
            let dag = aig.to_dag().unwrap();
            assert_eq!(aig_validity(&dag), 1.0);
            assert!(dag.levels_consistent());
            assert_eq!(aig.simulate().unwrap(), tt);
            assert_eq!(aig.n_const(), 0);
        }
    }

    #[test]
    fn full_scale_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut total = 0;
        let count = 500;
        for _ in 0..count {
            let (aig, tt) = random_aig(8, 2, 32, &mut rng).unwrap();
            assert!(aig.node_count() <= 32);
            assert_eq!(tt.n_in(), 8);
            assert_eq!(tt.n_out(), 2);
            total += aig.node_count();
        }
        let mean = total as f64 / count as f64;
        assert!((21.0 * 0.75..=21.0 * 1.25).contains(&mean), "mean node count {mean}");
    }
}
