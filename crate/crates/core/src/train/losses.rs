//! Reconstruction and adversarial objectives.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar, Tensor, Var};

/// Mean absolute difference over the frames where `mask` is true.
///
/// `pred` and `target` are `[T, C]`; `mask` has one entry per frame.
pub fn masked_l1<T: Scalar>(g: &mut Graph<T>, pred: Var, target: &Tensor<T>, mask: &[bool]) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if shape != target.shape() || shape.len() != 2 || mask.len() != shape[0] {
        return Err(Error::Data(format!(
            "masked_l1: pred {:?}, target {:?}, mask of {}",
            shape,
            target.shape(),
            mask.len()
        )));
    }
    let kept = mask.iter().filter(|&&m| m).count();
    if kept == 0 {
        return Err(Error::Data("masked_l1: every frame is masked".into()));
    }
    let c = shape[1];
    let w = Tensor::from_fn(&[shape[0], 1], |t| if mask[t] { T::one() } else { T::zero() });
    let tgt: Vec<T> = target
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask[i / c] { v } else { T::zero() })
        .collect();
    let tv = g.constant(Tensor::new(&shape, tgt)?);
    let wv = g.constant(w);
    let d = g.sub(pred, tv)?;
    let a = g.abs(d)?;
    let m = g.mul(a, wv)?;
    let s = g.sum(m)?;
    Ok(g.scale(s, T::one() / T::from_usize(kept * c).unwrap())?)
}

/// `mean((x - target)²)`.
pub fn mse_to<T: Scalar>(g: &mut Graph<T>, x: Var, target: f64) -> Result<Var> {
    let d = g.add_scalar(x, T::lit(-target))?;
    let sq = g.square(d)?;
    Ok(g.mean(sq)?)
}

/// LSGAN discriminator loss averaged over windows:
/// `mean((real − 1)²) + mean(fake²)` per window.
pub fn lsgan_d<T: Scalar>(g: &mut Graph<T>, pairs: &[(Var, Var)]) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for &(real, fake) in pairs {
        let a = mse_to(g, real, 1.0)?;
        let b = mse_to(g, fake, 0.0)?;
        let l = g.add(a, b)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    match total {
        None => Ok(None),
        Some(t) => Ok(Some(g.scale(t, T::one() / T::from_usize(pairs.len()).unwrap())?)),
    }
}

/// LSGAN generator loss averaged over windows: `mean((fake − 1)²)` per window.
pub fn lsgan_g<T: Scalar>(g: &mut Graph<T>, fakes: &[Var]) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for &fake in fakes {
        let l = mse_to(g, fake, 1.0)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    match total {
        None => Ok(None),
        Some(t) => Ok(Some(g.scale(t, T::one() / T::from_usize(fakes.len()).unwrap())?)),
    }
}
