use proptest::prelude::*;
use synsum_core::encoder::{gcn_layer, GcnLayerVars};
use synsum_core::{DocumentGraph, Edge, EdgeClass, Tape, Tensor};

fn layer(tape: &mut Tape, ws: &[Tensor], b: &Tensor) -> GcnLayerVars {
    GcnLayerVars {
        weights: [0, 1, 2, 3].map(|c| tape.constant(ws[c].clone())),
        bias: tape.constant(b.clone()),
    }
}

fn run(g: &DocumentGraph, h: &Tensor, ws: &[Tensor], b: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let lv = layer(&mut tape, ws, b);
    let x = tape.constant(h.clone());
    let y = gcn_layer(&mut tape, x, g, &lv).unwrap();
    tape.value(y).clone()
}

fn arb_case() -> impl Strategy<Value = (usize, Vec<(usize, usize, usize)>, Vec<usize>, u64)> {
    (1usize..8).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec((0..n, 0..n, 0usize..4), 0..3 * n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            any::<u64>(),
        )
    })
}

proptest! {
    /// Relabeling nodes permutes the output rows the same way.
    #[test]
    fn gcn_layer_is_permutation_equivariant((n, raw, perm, seed) in arb_case()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let ws: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[d, d], 1.0, &mut rng)).collect();
        let b = Tensor::uniform(&[1, d], 0.5, &mut rng);
        let h = Tensor::uniform(&[n, d], 1.0, &mut rng);
        let edge = |s: usize, t: usize, c: usize| Edge { src: s, dst: t, class: EdgeClass::ALL[c], label: None };
        let g = DocumentGraph { n, edges: raw.iter().map(|&(s, t, c)| edge(s, t, c)).collect(), roots: vec![0] };
        let pg = DocumentGraph {
            n,
            edges: raw.iter().map(|&(s, t, c)| edge(perm[s], perm[t], c)).collect(),
            roots: vec![perm[0]],
        };
        let mut ph = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                ph[perm[i] * d + k] = h.get(i, k);
            }
        }
        let out = run(&g, &h, &ws, &b);
        let pout = run(&pg, &Tensor::new(vec![n, d], ph).unwrap(), &ws, &b);
        for i in 0..n {
            for k in 0..d {
                prop_assert!((out.get(i, k) - pout.get(perm[i], k)).abs() < 1e-12);
            }
        }
    }
}
