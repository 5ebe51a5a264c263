//! Fully connected network over parameter entries `layer{i}.weight`
//! (`[in, out]`) and `layer{i}.bias` (`[out]`), SiLU between layers and a
//! linear output.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Bound, ParamSet, Role, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub fn weight_name(layer: usize) -> String {
    format!("layer{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

/// Number of consecutive `layer{i}` entries present.
pub fn layer_count(params: &ParamSet) -> usize {
    (0..).take_while(|&i| params.get(&weight_name(i)).is_some()).count()
}

/// Inserts freshly initialized layers for the given widths
/// (`widths[0]` is the input width). Weights ~ N(0, 1/fan_in), biases zero.
pub fn init_layers<R: Rng>(params: &mut ParamSet, widths: &[usize], rng: &mut R) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::invalid("an MLP needs at least input and output widths"));
    }
    for (i, w) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = (1.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        params.insert(weight_name(i), Tensor::new(vec![fan_in, fan_out], data)?)?;
        params.insert(bias_name(i), Tensor::zeros(&[fan_out]))?;
    }
    Ok(())
}

/// Forward pass on a tape. `input` is `[batch, width]`.
pub fn mlp_forward_on(tape: &mut Tape, bound: &Bound, input: Var, layers: usize) -> Result<Var> {
    let mut h = input;
    for i in 0..layers {
        let w = bound.get(&weight_name(i))?;
        let b = bound.get(&bias_name(i))?;
        let in_w = tape.value(w).shape()[0];
        if tape.value(h).cols() != in_w {
            return Err(Error::shape(
                format!("layer {i}"),
                format!("input width {} but weight expects {in_w}", tape.value(h).cols()),
            ));
        }
        h = tape.matmul(h, w)?;
        h = tape.add_row_bias(h, b)?;
        if i + 1 < layers {
            h = tape.silu(h);
        }
    }
    Ok(h)
}

/// Evaluates the network. With a tape the parameters are bound onto it and
/// every intermediate is recorded; without one a scratch tape is used and
/// dropped.
pub fn mlp_forward(params: &ParamSet, input: &Tensor, tape: Option<&mut Tape>) -> Result<Tensor> {
    let layers = layer_count(params);
    if layers == 0 {
        return Err(Error::invalid("parameter set has no layers"));
    }
    let mut scratch;
    let tape = match tape {
        Some(t) => t,
        None => {
            scratch = Tape::new();
            &mut scratch
        }
    };
    let bound = tape.bind(params)?;
    let x = tape.input(input.clone());
    let out = mlp_forward_on(tape, &bound, x, layers)?;
    let v = tape.value(out).clone();
    if !v.is_finite() {
        return Err(Error::NonFinite("mlp output".into()));
    }
    Ok(v)
}

/// Builds a set with explicit layer weights; handy for hand-checked cases.
pub fn from_layers(layers: &[(Tensor, Tensor)], role: Role) -> Result<ParamSet> {
    let mut p = ParamSet::new(Role::Trainable);
    for (i, (w, b)) in layers.iter().enumerate() {
        p.insert(weight_name(i), w.clone())?;
        p.insert(bias_name(i), b.clone())?;
    }
    Ok(p.with_role(role))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::tape::sigmoid;

    #[test]
    fn zero_network_outputs_bias() {
        let p = from_layers(
            &[(Tensor::zeros(&[3, 2]), Tensor::new(vec![2], vec![0.5, -1.0]).unwrap())],
            Role::Trainable,
        )
        .unwrap();
        let out = mlp_forward(&p, &Tensor::row(vec![1.0, 2.0, 3.0]), None).unwrap();
        assert_eq!(out.data(), &[0.5, -1.0]);

        let p = from_layers(&[(Tensor::zeros(&[3, 2]), Tensor::zeros(&[2]))], Role::Trainable)
            .unwrap();
        let out = mlp_forward(&p, &Tensor::row(vec![4.0, -2.0, 9.0]), None).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = from_layers(&[(eye, Tensor::zeros(&[2]))], Role::Trainable).unwrap();
        let v = Tensor::row(vec![0.25, -7.0]);
        assert_eq!(mlp_forward(&p, &v, None).unwrap(), v);
    }

    #[test]
    fn hand_evaluated_two_layers() {
        // h = silu(2 * 1 + 0.5) = 2.5 * sigmoid(2.5); y = -3 h + 1
        let p = from_layers(
            &[
                (Tensor::new(vec![1, 1], vec![2.0]).unwrap(), Tensor::scalar(0.5)),
                (Tensor::new(vec![1, 1], vec![-3.0]).unwrap(), Tensor::scalar(1.0)),
            ],
            Role::Trainable,
        )
        .unwrap();
        let out = mlp_forward(&p, &Tensor::row(vec![1.0]), None).unwrap();
        let expected = -3.0 * (2.5 * sigmoid(2.5)) + 1.0;
        assert!((out.item() - (-5.931063649840674)).abs() < 1e-12);
        assert_eq!(out.item(), expected);
    }

    #[test]
    fn width_mismatch_names_layer() {
        let p = from_layers(
            &[
                (Tensor::zeros(&[2, 3]), Tensor::zeros(&[3])),
                (Tensor::zeros(&[4, 1]), Tensor::zeros(&[1])),
            ],
            Role::Trainable,
        )
        .unwrap();
        let err = mlp_forward(&p, &Tensor::row(vec![1.0, 1.0]), None).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new(Role::Trainable);
        init_layers(&mut p, &[5, 7, 3], &mut rng).unwrap();
        let x = Tensor::new(vec![2, 5], (0..10).map(|i| i as f64 * 0.1).collect()).unwrap();
        let a = mlp_forward(&p, &x, None).unwrap();
        let b = mlp_forward(&p, &x, None).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
