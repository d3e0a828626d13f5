use crate::error::{Error, Result};

/// Euclidean projection onto `{w : ||w||_1 <= radius}`.
///
/// Sort-based: sort magnitudes descending, find the number of active
/// components from the cumulative sums, then soft-threshold. `O(g log g)`.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Argument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return Ok(v.to_vec());
    }

    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut rho = 0usize;
    let mut s_rho = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        if uj - (cumsum - radius) / (j + 1) as f64 > 0.0 {
            rho = j + 1;
            s_rho = cumsum;
        }
    }
    // rho >= 1 always holds here: u_1 - (u_1 - r) = r > 0.
    let theta = (s_rho - radius) / rho as f64;

    Ok(v.iter()
        .map(|&x| x.signum() * (x.abs() - theta).max(0.0))
        .collect())
}

/// Proximal map of `tau * ||.||_inf`, via the Moreau decomposition
/// `w = v - tau * proj_B1(v / tau)`.
pub fn prox_linf(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau < 0.0 || tau.is_infinite() {
        return Err(Error::Argument(format!(
            "tau must be finite and >= 0, got {tau}"
        )));
    }
    if tau == 0.0 {
        return Ok(v.to_vec());
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= tau {
        return Ok(vec![0.0; v.len()]);
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / tau).collect();
    let p = project_l1_ball(&scaled, 1.0)?;
    Ok(v.iter().zip(p).map(|(x, pi)| x - tau * pi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn projection_inside_ball_is_identity() {
        assert_eq!(project_l1_ball(&[0.3, -0.2], 1.0).unwrap(), vec![0.3, -0.2]);
    }

    #[test]
    fn projection_hand_examples() {
        // rho = 1, theta = 2
        assert!(close(
            &project_l1_ball(&[3.0, 1.0], 1.0).unwrap(),
            &[1.0, 0.0],
            1e-15
        ));
        // theta = 0.5, symmetric split
        assert!(close(
            &project_l1_ball(&[1.0, 1.0], 1.0).unwrap(),
            &[0.5, 0.5],
            1e-15
        ));
        // signs follow the input
        assert!(close(
            &project_l1_ball(&[-3.0, 1.0], 1.0).unwrap(),
            &[-1.0, 0.0],
            1e-15
        ));
    }

    #[test]
    fn projection_rejects_bad_radius() {
        assert!(project_l1_ball(&[1.0], 0.0).is_err());
        assert!(project_l1_ball(&[1.0], -1.0).is_err());
        assert!(project_l1_ball(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn prox_hand_example() {
        // v / tau = [1.5, 0.5] -> proj = [1, 0] -> w = [3, 1] - 2 * [1, 0]
        let w = prox_linf(&[3.0, 1.0], 2.0).unwrap();
        assert!(close(&w, &[1.0, 1.0], 1e-15));
        let obj = 0.5 * ((w[0] - 3.0f64).powi(2) + (w[1] - 1.0f64).powi(2)) + 2.0 * 1.0;
        assert!((obj - 4.0).abs() < 1e-12);
    }

    #[test]
    fn prox_full_shrinkage_and_identity() {
        assert_eq!(prox_linf(&[0.5, -0.4], 1.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(prox_linf(&[0.5, -0.4], 0.0).unwrap(), vec![0.5, -0.4]);
        assert!(prox_linf(&[1.0], -0.1).is_err());
    }

    #[test]
    fn prox_clips_to_common_level() {
        // one dominant entry is pulled down by exactly tau
        let w = prox_linf(&[5.0, 1.0, -0.5], 1.0).unwrap();
        assert!(close(&w, &[4.0, 1.0, -0.5], 1e-12));
    }
}
