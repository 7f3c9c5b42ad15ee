//! Minimal differentiable core: seven layer kinds with hand-written backward
//! passes, a parameter store with Adam, central-difference gradient checks
//! and a binary checkpoint format.

pub mod checkpoint;
mod gradcheck;
mod layers;
mod network;
mod params;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport, ParamCheck, Parameterized, Probe};
pub use layers::LayerSpec;
pub use network::{ActivationTape, Network};
pub use params::{poly_lr, AdamConfig, Gradients, Param, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng;
    use rand::Rng as _;

    fn random_tensor(c: usize, h: usize, w: usize, r: &mut rng::Rng) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_reproduces_interior() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        w.push(0.0);
        let net = Network::from_parts(vec![LayerSpec::conv(1, 1)], vec![w]).unwrap();
        let mut r = rng::stream(1, "t");
        let x = random_tensor(1, 6, 5, &mut r);
        let y = net.infer(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn relu_of_negative_is_zero() {
        let net = Network::from_parts(vec![LayerSpec::Relu], vec![]).unwrap();
        let x = Tensor::from_vec(1, 2, 2, vec![-1.0, -0.5, -3.0, -1e-9]).unwrap();
        assert!(net.infer(&x).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let net = Network::from_parts(vec![LayerSpec::Upsample2], vec![]).unwrap();
        let x = Tensor::from_vec(2, 3, 5, vec![0.25; 30]).unwrap();
        let y = net.infer(&x).unwrap();
        assert_eq!(y.shape(), [2, 6, 10]);
        assert!(y.data.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn downsample_handles_odd_sizes() {
        let net = Network::from_parts(vec![LayerSpec::Downsample2], vec![]).unwrap();
        let x = Tensor::from_vec(1, 3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let y = net.infer(&x).unwrap();
        assert_eq!(y.shape(), [1, 2, 2]);
        assert_eq!(y.data, vec![3.0, 4.5, 7.5, 9.0]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mut r = rng::stream(0, "t");
        let net = Network::new(vec![LayerSpec::conv(3, 4), LayerSpec::Relu], &mut r).unwrap();
        let err = net.infer(&Tensor::zeros(2, 4, 4)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { layer: 0, kind: "conv3x3", .. }));
        assert!(Network::new(vec![LayerSpec::conv(3, 4), LayerSpec::conv(5, 2)], &mut r).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut r = rng::stream(2, "t");
        let net = Network::new(
            vec![LayerSpec::conv(2, 3), LayerSpec::Relu, LayerSpec::GlobalAvgPool, LayerSpec::dense(3, 2)],
            &mut r,
        )
        .unwrap();
        let x = random_tensor(2, 5, 5, &mut r);
        let (y, tape) = net.forward(&x).unwrap();
        let (grads, gi) = net.backward(&tape, &Tensor::zeros(y.channels, y.height, y.width)).unwrap();
        assert!(grads.is_all_zero());
        assert!(gi.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_squared_error_closed_form() {
        // L = |Wx - y|^2, dL/dW = 2 (Wx - y) x^T
        let w = vec![0.5, -1.0, 2.0, 0.25, 0.0, -0.75];
        let net = Network::from_parts(
            vec![LayerSpec::Dense {
                in_features: 3,
                out_features: 2,
                has_bias: false,
            }],
            vec![w.clone()],
        )
        .unwrap();
        let x = [1.0, 2.0, -1.0];
        let target = [0.3, -0.2];
        let (out, tape) = net.forward(&Tensor::vector(x.to_vec())).unwrap();
        let resid: Vec<f64> = out.data.iter().zip(&target).map(|(o, t)| o - t).collect();
        let go = Tensor::vector(resid.iter().map(|r| 2.0 * r).collect());
        let (grads, _) = net.backward(&tape, &go).unwrap();
        for o in 0..2 {
            let wx: f64 = (0..3).map(|i| w[o * 3 + i] * x[i]).sum();
            for i in 0..3 {
                let expected = 2.0 * (wx - target[o]) * x[i];
                assert!((grads.0[0][o * 3 + i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stale_tape_rejected() {
        let mut r = rng::stream(3, "t");
        let mut net = Network::new(vec![LayerSpec::dense(2, 2)], &mut r).unwrap();
        let (_, tape) = net.forward(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        net.params_mut().get_mut(0).value[0] += 1.0;
        assert!(matches!(net.backward(&tape, &Tensor::vector(vec![1.0, 1.0])), Err(Error::StaleTape)));
        let other = net.clone();
        let (_, tape) = net.forward(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(other.backward(&tape, &Tensor::vector(vec![1.0, 1.0])), Err(Error::StaleTape)));
    }

    #[test]
    fn l2_normalize_unit_norm_and_zero_flag() {
        let net = Network::from_parts(vec![LayerSpec::L2Normalize], vec![]).unwrap();
        let mut r = rng::stream(4, "t");
        for _ in 0..50 {
            let x = random_tensor(7, 1, 1, &mut r);
            let (y, tape) = net.forward(&x).unwrap();
            let n: f64 = y.data.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(!tape.degenerate_norm);
        }
        let (y, tape) = net.forward(&Tensor::vector(vec![0.0; 4])).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
        assert!(tape.degenerate_norm);
    }

    #[test]
    fn forward_is_pure() {
        let mut r = rng::stream(5, "t");
        let net = Network::new(
            vec![LayerSpec::conv(3, 4), LayerSpec::Relu, LayerSpec::Downsample2, LayerSpec::Upsample2],
            &mut r,
        )
        .unwrap();
        let x = random_tensor(3, 7, 6, &mut r);
        let a = net.infer(&x).unwrap();
        let b = net.forward(&x).unwrap().0;
        assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    /// <v, f(x)> input-gradient check against central differences.
    fn input_jvp_error(net: &Network, x: &Tensor, r: &mut rng::Rng) -> f64 {
        let y = net.infer(x).unwrap();
        let v: Vec<f64> = (0..y.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let dot = |t: &Tensor| t.data.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        let (_, tape) = net.forward(x).unwrap();
        let vt = Tensor::from_vec(y.channels, y.height, y.width, v.clone()).unwrap();
        let (_, gi) = net.backward(&tape, &vt).unwrap();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let num = (dot(&net.infer(&xp).unwrap()) - dot(&net.infer(&xm).unwrap())) / (2.0 * h);
            let scale = num.abs().max(gi.data[i].abs());
            if scale > 1e-6 {
                worst = worst.max((num - gi.data[i]).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn every_layer_kind_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut r = rng::stream(seed, "jvp");
            let kinds: Vec<(Vec<LayerSpec>, [usize; 3])> = vec![
                (vec![LayerSpec::conv(2, 3)], [2, 5, 4]),
                (vec![LayerSpec::Relu], [2, 3, 3]),
                (vec![LayerSpec::Downsample2], [2, 5, 3]),
                (vec![LayerSpec::Upsample2], [2, 3, 4]),
                (vec![LayerSpec::GlobalAvgPool], [3, 4, 4]),
                (vec![LayerSpec::dense(6, 4)], [6, 1, 1]),
                (vec![LayerSpec::L2Normalize], [5, 1, 1]),
            ];
            for (layers, [c, h, w]) in kinds {
                let name = layers[0].name();
                let mut net = Network::new(layers, &mut r).unwrap();
                // non-zero biases so the bias path is exercised too
                for p in net.params_mut().iter_mut() {
                    for v in &mut p.value {
                        *v += r.random_range(-0.1..0.1);
                    }
                }
                let x = random_tensor(c, h, w, &mut r);
                let err = input_jvp_error(&net, &x, &mut r);
                assert!(err < 1e-4, "{name} seed {seed}: input gradient rel error {err}");
                if net.num_parameters() > 0 {
                    let v: Vec<f64> = {
                        let y = net.infer(&x).unwrap();
                        (0..y.len()).map(|_| r.random_range(-1.0..1.0)).collect()
                    };
                    let report = check_gradients(
                        &mut net,
                        |n: &Network, want| {
                            let (y, tape) = n.forward(&x)?;
                            let loss = y.data.iter().zip(&v).map(|(a, b)| a * b).sum();
                            let grads = if want {
                                let vt = Tensor::from_vec(y.channels, y.height, y.width, v.clone())?;
                                Some(vec![n.backward(&tape, &vt)?.0])
                            } else {
                                None
                            };
                            Ok(Probe { loss, grads, kinks: n.relu_signature(&tape) })
                        },
                        &GradCheckConfig::default(),
                    )
                    .unwrap();
                    assert!(report.passed, "{name} seed {seed}: {}", report.max_rel_error);
                }
            }
        }
    }

    fn quadratic_probe<'a>(x: &'a Tensor, target: &'a [f64]) -> impl FnMut(&Network, bool) -> crate::error::Result<Probe> + 'a {
        move |n: &Network, want| {
            let (y, tape) = n.forward(x)?;
            let resid: Vec<f64> = y.data.iter().zip(target).map(|(a, b)| a - b).collect();
            let loss = resid.iter().map(|r| r * r).sum();
            let grads = if want {
                let go = Tensor::vector(resid.iter().map(|r| 2.0 * r).collect());
                Some(vec![n.backward(&tape, &go)?.0])
            } else {
                None
            };
            Ok(Probe { loss, grads, kinks: n.relu_signature(&tape) })
        }
    }

    #[test]
    fn linear_quadratic_check_is_tight() {
        let mut r = rng::stream(6, "t");
        let mut net = Network::new(vec![LayerSpec::dense(4, 3)], &mut r).unwrap();
        let x = random_tensor(4, 1, 1, &mut r);
        let target = [0.1, -0.4, 0.9];
        let report = check_gradients(&mut net, quadratic_probe(&x, &target), &GradCheckConfig::default()).unwrap();
        assert!(report.max_rel_error < 1e-7, "{}", report.max_rel_error);
        assert!(report.passed);
        let strict = GradCheckConfig {
            tolerance: 0.0,
            ..GradCheckConfig::default()
        };
        let mut r = rng::stream(7, "t");
        let mut deep = Network::new(
            vec![LayerSpec::dense(4, 5), LayerSpec::Relu, LayerSpec::dense(5, 3)],
            &mut r,
        )
        .unwrap();
        let report = check_gradients(&mut deep, quadratic_probe(&x, &target), &strict).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn relu_at_zero_is_excluded() {
        // pre-activation 0.5 * 1 - 0.5 = 0 exactly
        let net_layers = vec![LayerSpec::dense(1, 1), LayerSpec::Relu];
        let mut net = Network::from_parts(net_layers, vec![vec![0.5, -0.5]]).unwrap();
        let x = Tensor::vector(vec![1.0]);
        let report = check_gradients(&mut net, quadratic_probe(&x, &[1.0]), &GradCheckConfig::default()).unwrap();
        assert_eq!(report.excluded, 2);
        assert_eq!(report.compared, 0);
    }

    #[test]
    fn random_two_layer_nets_pass() {
        for seed in 0..5u64 {
            let mut r = rng::stream(seed, "two-layer");
            let mut net = Network::new(
                vec![LayerSpec::conv(2, 3), LayerSpec::Relu, LayerSpec::conv(3, 2)],
                &mut r,
            )
            .unwrap();
            let x = random_tensor(2, 4, 4, &mut r);
            let target: Vec<f64> = (0..32).map(|_| r.random_range(-1.0..1.0)).collect();
            let report = check_gradients(
                &mut net,
                move |n: &Network, want| {
                    let (y, tape) = n.forward(&x)?;
                    let resid: Vec<f64> = y.data.iter().zip(&target).map(|(a, b)| a - b).collect();
                    let grads = if want {
                        let go = Tensor::from_vec(2, 4, 4, resid.iter().map(|r| 2.0 * r).collect())?;
                        Some(vec![n.backward(&tape, &go)?.0])
                    } else {
                        None
                    };
                    Ok(Probe {
                        loss: resid.iter().map(|r| r * r).sum(),
                        grads,
                        kinks: n.relu_signature(&tape),
                    })
                },
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(report.passed, "seed {seed}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn checkpoint_round_trip_at_f32_precision() {
        let mut r = rng::stream(8, "t");
        let a = Network::new(vec![LayerSpec::conv(3, 2), LayerSpec::Relu, LayerSpec::Downsample2], &mut r).unwrap();
        let b = Network::new(vec![LayerSpec::GlobalAvgPool, LayerSpec::dense(2, 4), LayerSpec::L2Normalize], &mut r).unwrap();
        let bytes = checkpoint::encode(&[("enc", &a), ("head", &b)]);
        let mut back = checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        let head = checkpoint::take_named(&mut back, "head").unwrap();
        assert_eq!(head.layers(), b.layers());
        for (p, q) in head.params().iter().zip(b.params().iter()) {
            for (x, y) in p.value.iter().zip(&q.value) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
        // re-encoding the decoded networks is byte-identical
        let enc = checkpoint::take_named(&mut back, "enc").unwrap();
        assert_eq!(checkpoint::encode(&[("enc", &enc), ("head", &head)]), bytes);
        assert!(checkpoint::decode(&bytes[..bytes.len() - 2]).is_err());
        assert!(checkpoint::decode(b"NOPE").is_err());
    }
}
