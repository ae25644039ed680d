use keystego::cost::{hill_cost, CostParams};
use keystego::fnn::FixedDecoder;
use keystego::image::{Shape, Tensor3};
use keystego::keystream::StegoKey;
use keystego::verify::{central_difference, naive_decoder_forward, naive_hill_cost};

fn noise(seed: &str, shape: Shape, lo: f64, hi: f64) -> Tensor3 {
    let mut s = StegoKey::from_passphrase(seed).stream();
    Tensor3::from_fn(shape, |_, _, _| lo + (hi - lo) * s.next_unit())
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn decoder_matches_nested_loops() {
    for depth in [1, 2, 4] {
        let dec = FixedDecoder::build_seeded(&StegoKey::from_passphrase("oracle"), depth).unwrap();
        // unclipped inputs, as the decoder sees encrypted images
        let img = noise("forward", Shape::new(3, 8, 8), -1.0, 2.0);
        let fast = dec.forward(&img).unwrap();
        let slow = naive_decoder_forward(&dec, &img);
        assert_eq!(fast.shape(), Shape::new(depth, 8, 8));
        assert!(max_diff(fast.data(), slow.data()) < 1e-9);
    }
}

#[test]
fn decoder_matches_nested_loops_on_rectangles() {
    let dec = FixedDecoder::build_seeded(&StegoKey::from_passphrase("rect"), 1).unwrap();
    let img = noise("rect-input", Shape::new(3, 5, 11), 0.0, 1.0);
    let fast = dec.forward(&img).unwrap();
    assert!(max_diff(fast.data(), naive_decoder_forward(&dec, &img).data()) < 1e-9);
}

#[test]
fn cost_matches_nested_loops() {
    let img = noise("cost", Shape::new(3, 16, 16), 0.0, 1.0);
    let params = CostParams::default();
    let fast = hill_cost(&img, &params).unwrap();
    let slow = naive_hill_cost(&img, &params);
    assert!(max_diff(fast.data(), slow.data()) < 1e-9);

    // images smaller than the 15x15 window fold the padding more than once
    let tiny = noise("tiny", Shape::new(3, 5, 6), 0.0, 1.0);
    let fast = hill_cost(&tiny, &params).unwrap();
    assert!(max_diff(fast.data(), naive_hill_cost(&tiny, &params).data()) < 1e-9);
}

#[test]
fn linear_network_is_linear_and_its_gradient_exact() {
    let dec = FixedDecoder::build_seeded(&StegoKey::from_passphrase("linear"), 2)
        .unwrap()
        .with_negative_slope(1.0);
    let shape = Shape::new(3, 6, 7);
    let a = noise("a", shape, -1.0, 1.0);
    let b = noise("b", shape, -1.0, 1.0);
    let fa = dec.forward(&a).unwrap();
    let fb = dec.forward(&b).unwrap();
    let fab = dec.forward(&a.add(&b).unwrap()).unwrap();
    let summed: Vec<f64> = fa.data().iter().zip(fb.data()).map(|(x, y)| x + y).collect();
    assert!(max_diff(fab.data(), &summed) < 1e-12);

    // the input gradient of <g, F(x)> is the adjoint applied to g, and a
    // linear objective makes central differences exact up to rounding
    let g = noise("g", Shape::new(2, 6, 7), -1.0, 1.0);
    let analytic = dec.input_gradient(&a, &g).unwrap();
    let f = |x: &[f64]| {
        let out = dec.forward(&Tensor3::from_vec(shape, x.to_vec()).unwrap()).unwrap();
        out.data().iter().zip(g.data()).map(|(o, w)| o * w).sum::<f64>()
    };
    let numeric = central_difference(f, a.data(), 0.5);
    assert!(max_diff(analytic.data(), &numeric) < 1e-10);
}
