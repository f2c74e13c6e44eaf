mod common;

use aevit_core::nn::film::{film_conv, film_tokens, BoundedScalar, FilmConfig, Strength};
use aevit_core::nn::layers::{Activation, Init};
use aevit_core::nn::vit::{EncoderLayer, Vit, VitConditioning, VitConfig, VitSites, VitSpec};
use aevit_tensor::gradcheck::check_params;
use aevit_tensor::{Graph, ParamStore, Tensor, Var};
use common::{jitter, rng, uniform};

const CFG: VitConfig = VitConfig {
    patch: 2,
    emb: 8,
    layers: 2,
    heads: 2,
    ff: 16,
};

fn build(sites: VitSites, height: usize, width: usize) -> (Vit, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let film = FilmConfig {
        hidden: 8,
        ..FilmConfig::default()
    };
    let vit = Vit::new(
        &mut Init::new(&mut store, 3),
        "vit",
        VitSpec {
            cfg: CFG,
            in_channels: 3,
            out_channels: 3,
            height,
            width,
            sites,
            n_params: 3,
            film: &film,
            act: Activation::Gelu,
        },
    )
    .unwrap();
    (vit, store)
}

fn all_sites() -> VitSites {
    VitSites {
        layernorm: true,
        qkv: true,
        token: true,
    }
}

fn run(vit: &Vit, p: &ParamStore<f64>, x: &Tensor<f64>, lam: &Tensor<f64>) -> (Tensor<f64>, Vec<Tensor<f64>>) {
    let mut g = Graph::new();
    let l = g.input(lam.clone());
    let cond = vit.condition(&mut g, p, l).unwrap();
    let xv = g.input(x.clone());
    let mut probe = Vec::new();
    let y = vit.forward(&mut g, p, xv, &cond, Some(&mut probe)).unwrap();
    let attn = probe.iter().map(|&a| g.value(a).clone()).collect();
    (g.value(y).clone(), attn)
}

#[test]
fn token_count_follows_toggle() {
    let (off, _) = build(VitSites::default(), 8, 8);
    let (on, _) = build(all_sites(), 8, 8);
    assert_eq!(off.n_tokens(), 16);
    assert_eq!(on.n_tokens(), 17);
    let (fine, _) = build(VitSites::default(), 8, 8);
    assert_eq!(fine.n_patches(), (8 / CFG.patch) * (8 / CFG.patch));
}

#[test]
fn patch_one_gives_one_token_per_cell() {
    let cfg = VitConfig { patch: 1, ..CFG };
    assert_eq!(cfg.grid(4, 6).unwrap(), (4, 6));
    assert!(CFG.grid(5, 8).is_err());
    assert!(VitConfig { heads: 3, ..CFG }.validate().is_err());
}

#[test]
fn attention_rows_are_stochastic() {
    let (vit, store) = build(all_sites(), 8, 8);
    let mut store = store;
    jitter(&mut store, 0.3, 1);
    let p = store.cast::<f64>();
    let mut r = rng(5);
    for _ in 0..20 {
        let x = uniform::<f64>(&mut r, &[2, 3, 8, 8]);
        let lam = uniform::<f64>(&mut r, &[2, 3]);
        let (_, attn) = run(&vit, &p, &x, &lam);
        assert_eq!(attn.len(), CFG.layers);
        for a in attn {
            assert_eq!(a.shape(), &[2 * CFG.heads, 17, 17]);
            for row in a.data().chunks(17) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "{s}");
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}

fn layer(sites: VitSites, seed: u64) -> (EncoderLayer, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let film = FilmConfig {
        hidden: 8,
        ..FilmConfig::default()
    };
    let l = EncoderLayer::new(&mut Init::new(&mut store, seed), "layer", &CFG, sites, 3, &film, Activation::Gelu).unwrap();
    (l, store)
}

fn layer_forward(l: &EncoderLayer, p: &ParamStore<f64>, x: &Tensor<f64>, lam: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::new();
    let lv = g.input(lam.clone());
    let cond = l.condition(&mut g, p, lv).unwrap();
    let xv = g.input(x.clone());
    let mut probe = Vec::new();
    let y = l.forward(&mut g, p, xv, &cond, Some(&mut probe)).unwrap();
    (g.value(y).clone(), g.value(probe[0]).clone())
}

#[test]
fn identical_tokens_attend_uniformly() {
    let (l, store) = layer(all_sites(), 2);
    let p = store.cast::<f64>();
    let mut r = rng(9);
    let row = uniform::<f64>(&mut r, &[CFG.emb]);
    let x = Tensor::from_fn([1, 5, CFG.emb], |i| row.data()[i % CFG.emb]);
    let (_, attn) = layer_forward(&l, &p, &x, &uniform(&mut r, &[1, 3]));
    for &a in attn.data() {
        assert!((a - 0.2).abs() < 1e-12, "{a}");
    }
}

fn ln_rows(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|row| {
            let m = row.iter().sum::<f64>() / d as f64;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / d as f64;
            let s = (v + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(move |(j, a)| (a - m) / s * gamma[j] + beta[j])
                .collect::<Vec<_>>()
        })
        .collect()
}

fn affine(x: &[f64], din: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let dout = b.len();
    x.chunks(din)
        .flat_map(|row| (0..dout).map(move |o| b[o] + (0..din).map(|i| row[i] * w[i * dout + o]).sum::<f64>()))
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044_715 * x.powi(3))).tanh())
}

/// Textbook pre-norm transformer layer on `[T, D]` rows.
fn reference_layer(p: &ParamStore<f64>, x: &[f64], t: usize) -> Vec<f64> {
    let d = CFG.emb;
    let (h, dk) = (CFG.heads, CFG.emb / CFG.heads);
    let w = |n: &str| p.by_name(&format!("layer.{n}")).unwrap().to_vec();
    let a = ln_rows(x, d, &w("ln1.weight"), &w("ln1.bias"));
    let qkv = affine(&a, d, &w("qkv.weight"), &w("qkv.bias"));
    let at = |i: usize, part: usize, head: usize, j: usize| qkv[i * 3 * d + part * d + head * dk + j];
    let mut o = vec![0.0; t * d];
    for head in 0..h {
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|k| (0..dk).map(|j| at(i, 0, head, j) * at(k, 1, head, j)).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..dk {
                o[i * d + head * dk + j] = (0..t).map(|k| e[k] / z * at(k, 2, head, j)).sum();
            }
        }
    }
    let o = affine(&o, d, &w("proj.weight"), &w("proj.bias"));
    let x1: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
    let a = ln_rows(&x1, d, &w("ln2.weight"), &w("ln2.bias"));
    let f = affine(&a, d, &w("ff1.weight"), &w("ff1.bias"));
    let f: Vec<f64> = f.into_iter().map(gelu).collect();
    let f = affine(&f, CFG.ff, &w("ff2.weight"), &w("ff2.bias"));
    x1.iter().zip(&f).map(|(a, b)| a + b).collect()
}

#[test]
fn unconditioned_layer_matches_reference() {
    let (l, mut store) = layer(VitSites::default(), 4);
    jitter(&mut store, 0.2, 4);
    let p = store.cast::<f64>();
    let mut r = rng(11);
    for _ in 0..5 {
        let x = uniform::<f64>(&mut r, &[1, 6, CFG.emb]);
        let (y, _) = layer_forward(&l, &p, &x, &uniform(&mut r, &[1, 3]));
        let want = reference_layer(&p, x.data(), 6);
        let diff = y.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }
}

#[test]
fn zero_init_modulation_is_exact_identity() {
    let (plain, store_plain) = layer(VitSites::default(), 6);
    let (modulated, mut store_mod) = layer(
        VitSites {
            layernorm: true,
            qkv: true,
            token: false,
        },
        6,
    );
    modulated.qkv_film.as_ref().unwrap().eta.set(&mut store_mod, 0.0);
    let (pp, pm) = (store_plain.cast::<f64>(), store_mod.cast::<f64>());
    let mut r = rng(13);
    for _ in 0..10 {
        let x = uniform::<f64>(&mut r, &[2, 5, CFG.emb]);
        let lam = uniform::<f64>(&mut r, &[2, 3]);
        let (a, _) = layer_forward(&plain, &pp, &x, &lam);
        let (b, _) = layer_forward(&modulated, &pm, &x, &lam);
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn swapping_tokens_and_positions_swaps_outputs() {
    let (vit, mut store) = build(all_sites(), 8, 8);
    jitter(&mut store, 0.3, 8);
    let p = store.cast::<f64>();
    let mut r = rng(17);
    let tokens = uniform::<f64>(&mut r, &[1, 16, CFG.emb]);
    let lam = uniform::<f64>(&mut r, &[1, 3]);
    let (i, j) = (2, 11);
    let swap_rows = |t: &Tensor<f64>| {
        let mut v = t.to_vec();
        let d = CFG.emb;
        let off = v.len() - t.shape()[t.rank() - 2] * d;
        for c in 0..d {
            v.swap(off + i * d + c, off + j * d + c);
        }
        Tensor::new(t.shape().to_vec(), v).unwrap()
    };
    let body = |p: &ParamStore<f64>, tokens: &Tensor<f64>| -> Tensor<f64> {
        let mut g = Graph::new();
        let l = g.input(lam.clone());
        let cond: VitConditioning = vit.condition(&mut g, p, l).unwrap();
        let tv = g.input(tokens.clone());
        let mut h: Var = vit.embed_tokens(&mut g, p, tv, &cond).unwrap();
        for (layer, c) in vit.layers.iter().zip(&cond.layers) {
            h = layer.forward(&mut g, p, h, c, None).unwrap();
        }
        g.value(h).clone()
    };
    let base = body(&p, &tokens);
    let mut swapped = p.clone();
    let pos = swapped.get_mut(vit.pos);
    *pos = swap_rows(&Tensor::new([1, 17, CFG.emb], pos.to_vec()).unwrap())
        .reshape([17, CFG.emb])
        .unwrap();
    let moved = body(&swapped, &swap_rows(&tokens));
    let expect = swap_rows(&base);
    assert!(moved.max_abs_diff(&expect) < 1e-12);
}

#[test]
fn unpatchify_inverts_patchify_with_identity_weights() {
    let (c, ps) = (3, 2);
    let mut store = ParamStore::new();
    let film = FilmConfig::default();
    let cfg = VitConfig {
        emb: c * ps * ps,
        heads: 1,
        ..CFG
    };
    let vit = Vit::new(
        &mut Init::new(&mut store, 0),
        "vit",
        VitSpec {
            cfg,
            in_channels: c,
            out_channels: c,
            height: 6,
            width: 4,
            sites: VitSites::default(),
            n_params: 3,
            film: &film,
            act: Activation::Gelu,
        },
    )
    .unwrap();
    let d = cfg.emb;
    let embed = Tensor::from_fn([d, c, ps, ps], |k| if k / d == k % d { 1.0 } else { 0.0 });
    *store.get_mut(vit.embed.w) = embed;
    *store.get_mut(vit.embed.b) = Tensor::zeros([d]);
    *store.get_mut(vit.unembed.w) = Tensor::from_fn([d, d], |k| if k / d == k % d { 1.0 } else { 0.0 });
    *store.get_mut(vit.unembed.b) = Tensor::zeros([d]);
    let mut r = rng(21);
    let x = uniform::<f32>(&mut r, &[2, c, 6, 4]);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let t = vit.patchify(&mut g, &store, xv).unwrap();
    assert_eq!(g.shape(t), &[2, 6, d]);
    let y = vit.unpatchify(&mut g, &store, t).unwrap();
    assert_eq!(g.value(y).data(), x.data());
}

#[test]
fn wrong_input_size_is_rejected() {
    let (vit, store) = build(VitSites::default(), 8, 8);
    let mut g = Graph::new();
    let x = g.input(Tensor::<f32>::zeros([1, 3, 8, 6]));
    assert!(vit.patchify(&mut g, &store, x).is_err());
    let t = g.input(Tensor::<f32>::zeros([1, 15, CFG.emb]));
    let cond = VitConditioning {
        token: None,
        layers: Vec::new(),
    };
    assert!(vit.embed_tokens(&mut g, &store, t, &cond).is_err());
}

#[test]
fn parameter_tokens_differ_across_parameters() {
    let (vit, store) = build(all_sites(), 8, 8);
    let p = store.cast::<f64>();
    let mut r = rng(23);
    let mut g = Graph::new();
    let l = g.input(uniform::<f64>(&mut r, &[16, 3]));
    let cond = vit.condition(&mut g, &p, l).unwrap();
    let tok = g.value(cond.token.unwrap()).clone();
    let rows: Vec<&[f64]> = tok.data().chunks(CFG.emb).collect();
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            assert!(rows[a].iter().zip(rows[b]).any(|(x, y)| (x - y).abs() > 1e-9));
        }
    }
}

#[test]
fn film_conv_matches_loops() {
    let mut r = rng(31);
    let (n, c, hw) = (2, 3, 5);
    let h = uniform::<f64>(&mut r, &[n, c, hw, hw]);
    let a = uniform::<f64>(&mut r, &[n, c]);
    let b = uniform::<f64>(&mut r, &[n, c]);
    let mut g = Graph::new();
    let (hv, av, bv) = (g.input(h.clone()), g.input(a.clone()), g.input(b.clone()));
    let y = film_conv(&mut g, hv, av, bv).unwrap();
    let y = g.value(y);
    for (k, &v) in y.data().iter().enumerate() {
        let nc = k / (hw * hw);
        assert!((v - (a.data()[nc] * h.data()[k] + b.data()[nc])).abs() < 1e-15);
    }
    let zero = g.input(Tensor::zeros([n, c]));
    let y = film_conv(&mut g, hv, zero, bv).unwrap();
    for (k, &v) in g.value(y).data().iter().enumerate() {
        assert_eq!(v, b.data()[k / (hw * hw)]);
    }
}

#[test]
fn layernorm_modulation_formula() {
    let mut r = rng(37);
    let x = uniform::<f64>(&mut r, &[2, 4, 6]);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let ln = g.layer_norm(xv, 1e-5).unwrap();
    let ones = g.input(Tensor::ones([2, 6]));
    let y = film_tokens(&mut g, ln, ones, ones, Strength::Fixed(1e-3)).unwrap();
    let base = g.value(ln).clone();
    for (a, b) in g.value(y).data().iter().zip(base.data()) {
        assert!((a - (1.001 * b + 0.001)).abs() < 1e-14);
    }
}

#[test]
fn eta_bounds_and_identity() {
    let mut store = ParamStore::new();
    let eta = BoundedScalar::new(&mut Init::new(&mut store, 0), "eta", 0.1, 0.5).unwrap();
    assert!((eta.value(&store) - 0.05).abs() < 1e-7);
    for raw in [-1e6f32, -3.0, 0.0, 2.0, 1e6] {
        store.get_mut(eta.raw).data_mut()[0] = raw;
        assert!(eta.value(&store).abs() <= 0.1);
    }
    let mut r = rng(41);
    let x = uniform::<f64>(&mut r, &[1, 3, 4]);
    let a = uniform::<f64>(&mut r, &[1, 4]);
    let b = uniform::<f64>(&mut r, &[1, 4]);
    eta.set(&mut store, 0.0);
    let p = store.cast::<f64>();
    let mut g = Graph::new();
    let (xv, av, bv) = (g.input(x.clone()), g.input(a), g.input(b));
    let e = eta.forward(&mut g, &p).unwrap();
    let y = film_tokens(&mut g, xv, av, bv, Strength::Learned(e)).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    // Near the cap with α = 1, β = 0 the output scales by 1 + cap.
    eta.set(&mut store, 0.1 * (1.0 - 1e-7));
    let p = store.cast::<f64>();
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let (one, zero) = (g.input(Tensor::ones([1, 4])), g.input(Tensor::zeros([1, 4])));
    let e = eta.forward(&mut g, &p).unwrap();
    let y = film_tokens(&mut g, xv, one, zero, Strength::Learned(e)).unwrap();
    for (a, b) in g.value(y).data().iter().zip(x.data()) {
        assert!((a - 1.1 * b).abs() < 1e-6);
    }
}

#[test]
fn eta_gradient_matches_finite_differences() {
    let mut store = ParamStore::new();
    let eta = BoundedScalar::new(&mut Init::new(&mut store, 0), "eta", 0.1, 0.3).unwrap();
    let p = store.cast::<f64>();
    let mut r = rng(43);
    let x = uniform::<f64>(&mut r, &[2, 3, 4]);
    let a = uniform::<f64>(&mut r, &[2, 4]);
    let b = uniform::<f64>(&mut r, &[2, 4]);
    let report = check_params(
        &p,
        |g, s| {
            let (xv, av, bv) = (g.input(x.clone()), g.input(a.clone()), g.input(b.clone()));
            let e = eta.forward(g, s).unwrap();
            let y = film_tokens(g, xv, av, bv, Strength::Learned(e)).unwrap();
            let y2 = g.mul(y, y)?;
            g.sum(y2)
        },
        &[(eta.raw, 0)],
        1e-5,
    )
    .unwrap();
    assert!(report.passes(1e-6), "{:?}", report.worst());
}
