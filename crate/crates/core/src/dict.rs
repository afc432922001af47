//! Dictionary learning from root-centered training poses and sparse coding.

use nalgebra::{DMatrix, DVector, Matrix3xX};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{PoseDictionary, Skeleton};
use crate::solvers::{minimize_l1_composite, Grams, SeparableQuadratic};

/// Fraction of poses allowed to contain a zero-length edge.
const MAX_ZERO_EDGE_FRACTION: f64 = 0.01;

/// Root-centered training poses and their mean edge length.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPoses {
    pub skeleton: Skeleton,
    pub poses: Vec<Matrix3xX<f64>>,
    pub mean_limb_length: f64,
}

/// Subtracts the root joint from every pose and measures the mean edge length.
pub fn preprocess(raw: &[Matrix3xX<f64>], skeleton: &Skeleton) -> Result<TrainingPoses> {
    if raw.is_empty() {
        return Err(Error::Data("no training poses".into()));
    }
    let p = skeleton.joint_count();
    let root = skeleton.root();
    let mut poses = Vec::with_capacity(raw.len());
    let mut zero_edge_poses = 0usize;
    let mut total = 0.0;
    for (i, pose) in raw.iter().enumerate() {
        if pose.ncols() != p {
            return Err(Error::Dimension(format!(
                "training pose {i} has {} joints, skeleton has {p}",
                pose.ncols()
            )));
        }
        if pose.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("training pose {i}")));
        }
        let r = pose.column(root).clone_owned();
        let mut centered = pose.clone();
        for mut col in centered.column_iter_mut() {
            col -= r;
        }
        let mut has_zero = false;
        for &(a, b) in skeleton.edges() {
            let len = (centered.column(a) - centered.column(b)).norm();
            has_zero |= len < 1e-12;
            total += len;
        }
        zero_edge_poses += has_zero as usize;
        poses.push(centered);
    }
    if zero_edge_poses as f64 > MAX_ZERO_EDGE_FRACTION * raw.len() as f64 {
        return Err(Error::Data(format!(
            "{zero_edge_poses} of {} training poses have zero-length edges",
            raw.len()
        )));
    }
    let mean_limb_length = total / (raw.len() * skeleton.edges().len()) as f64;
    if !(mean_limb_length > 0.0) {
        return Err(Error::Data(
            "training poses have zero mean limb length".into(),
        ));
    }
    Ok(TrainingPoses {
        skeleton: skeleton.clone(),
        poses,
        mean_limb_length,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub k: usize,
    /// L1 weight of the sparse-coding stage.
    pub alpha: f64,
    pub seed: u64,
    pub max_rounds: usize,
    /// Stop when the relative change of the training objective falls below this.
    pub tol: f64,
    /// Frobenius-norm bound of every atom.
    pub atom_scale: f64,
    pub apg_max_iter: usize,
    pub apg_tol: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            k: 64,
            alpha: 0.5,
            seed: 0,
            max_rounds: 30,
            tol: 1e-4,
            atom_scale: 1.0,
            apg_max_iter: 500,
            apg_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnReport {
    /// `½‖X − BA‖² + α‖A‖₁` after initial coding and after every round.
    pub objective: Vec<f64>,
    pub rounds: usize,
    /// Mean Frobenius residual of the training poses under their final codes.
    pub reconstruction_error: f64,
    /// Mean Frobenius norm of the training poses.
    pub pose_scale: f64,
    pub reseeded_atoms: usize,
    /// Set when fewer training poses than atoms were given.
    pub underdetermined: bool,
}

fn stack(poses: &[Matrix3xX<f64>]) -> DMatrix<f64> {
    let rows = poses[0].len();
    DMatrix::from_fn(rows, poses.len(), |r, c| poses[c][r])
}

fn unstack(col: nalgebra::DVectorView<f64>, p: usize) -> Matrix3xX<f64> {
    Matrix3xX::from_column_slice(&col.iter().cloned().collect::<Vec<_>>()[..3 * p])
}

fn code_all(
    atoms: &DMatrix<f64>,
    data: &DMatrix<f64>,
    warm: &DMatrix<f64>,
    alpha: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let f = SeparableQuadratic {
        grams: Grams::Shared(atoms.transpose() * atoms),
        linear: atoms.transpose() * data,
        constants: data.column_iter().map(|c| c.norm_squared()).collect(),
        weight: 1.0,
        smoothness: 0.0,
    };
    let (codes, report) = minimize_l1_composite(&f, alpha, warm, max_iter, tol)?;
    Ok((codes, report.objective))
}

fn training_objective(
    atoms: &DMatrix<f64>,
    data: &DMatrix<f64>,
    codes: &DMatrix<f64>,
    alpha: f64,
) -> f64 {
    0.5 * (data - atoms * codes).norm_squared() + alpha * codes.iter().map(|v| v.abs()).sum::<f64>()
}

/// Seeded first atom, then greedily the training pose least coherent with the chosen set.
fn initial_atoms(
    data: &DMatrix<f64>,
    k: usize,
    scale: f64,
    root: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let dim = data.nrows();
    let m = data.ncols();
    let units: Vec<Option<DVector<f64>>> = data
        .column_iter()
        .map(|c| {
            let norm = c.norm();
            (norm > 1e-12).then(|| c / norm)
        })
        .collect();
    let mut atoms = DMatrix::zeros(dim, k);
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..m);
    for slot in 0..k {
        let pick = if slot == 0 && units[first].is_some() {
            Some(first)
        } else {
            (0..m)
                .filter_map(|i| {
                    let u = units[i].as_ref()?;
                    let coherence = chosen.iter().map(|c| c.dot(u).abs()).fold(0.0, f64::max);
                    Some((coherence, i))
                })
                .filter(|(c, _)| *c < 1.0 - 1e-9)
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, i)| i)
        };
        let unit = match pick {
            Some(i) => units[i].clone().unwrap(),
            None => {
                // random direction that keeps the root joint at the origin
                let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                v.rows_mut(3 * root, 3).fill(0.0);
                &v / v.norm()
            }
        };
        atoms.set_column(slot, &(&unit * scale));
        chosen.push(unit);
    }
    atoms
}

/// Alternates sparse coding of every training pose with exact per-atom
/// least-squares updates projected onto the atom-norm ball.
pub fn learn_dictionary(
    train: &TrainingPoses,
    config: &LearnConfig,
) -> Result<(PoseDictionary, LearnReport)> {
    if config.k == 0 {
        return Err(Error::InvalidParams("dictionary needs k >= 1".into()));
    }
    if !(config.alpha >= 0.0 && config.alpha.is_finite()) {
        return Err(Error::InvalidParams(format!("alpha {}", config.alpha)));
    }
    if !(config.atom_scale > 0.0 && config.atom_scale.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "atom scale {}",
            config.atom_scale
        )));
    }
    let p = train.skeleton.joint_count();
    let k = config.k;
    let data = stack(&train.poses);
    let m = data.ncols();
    let pose_scale = data.column_iter().map(|c| c.norm()).sum::<f64>() / m as f64;
    if !(pose_scale > 0.0) {
        return Err(Error::Learning("training poses are all zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut atoms = initial_atoms(&data, k, config.atom_scale, train.skeleton.root(), &mut rng);
    let (mut codes, mut current) = code_all(
        &atoms,
        &data,
        &DMatrix::zeros(k, m),
        config.alpha,
        config.apg_max_iter,
        config.apg_tol,
    )?;
    let mut report = LearnReport {
        objective: vec![current],
        rounds: 0,
        reconstruction_error: 0.0,
        pose_scale,
        reseeded_atoms: 0,
        underdetermined: m < k,
    };

    for _ in 0..config.max_rounds {
        report.rounds += 1;
        let mut residual = &data - &atoms * &codes;
        for i in 0..k {
            let a = codes.row(i).transpose();
            let energy = a.norm_squared();
            if energy == 0.0 {
                // an unused atom does not affect the objective; point it at the worst fit
                let worst = residual
                    .column_iter()
                    .enumerate()
                    .map(|(c, r)| (r.norm_squared(), c))
                    .max_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)))
                    .map(|(_, c)| c)
                    .unwrap();
                let target = data.column(worst);
                if target.norm() > 1e-12 {
                    atoms.set_column(i, &(target * (config.atom_scale / target.norm())));
                    report.reseeded_atoms += 1;
                }
                continue;
            }
            let old = atoms.column(i).clone_owned();
            residual += &old * a.transpose();
            let mut d = &residual * &a / energy;
            let norm = d.norm();
            if norm > config.atom_scale {
                d *= config.atom_scale / norm;
            }
            residual -= &d * a.transpose();
            atoms.set_column(i, &d);
        }
        let after_atoms = training_objective(&atoms, &data, &codes, config.alpha);
        let (next_codes, _) = code_all(
            &atoms,
            &data,
            &codes,
            config.alpha,
            config.apg_max_iter,
            config.apg_tol,
        )?;
        codes = next_codes;
        let next = training_objective(&atoms, &data, &codes, config.alpha);
        let slack = 1e-10 * current.abs().max(1.0);
        if after_atoms > current + slack || next > after_atoms + slack {
            return Err(Error::Learning(format!(
                "training objective increased from {current} to {}",
                next.max(after_atoms)
            )));
        }
        report.objective.push(next);
        let rel = (current - next).abs() / current.abs().max(1.0);
        current = next;
        if rel < config.tol {
            break;
        }
    }

    let fitted = &atoms * &codes;
    report.reconstruction_error = (0..m)
        .map(|c| (data.column(c) - fitted.column(c)).norm())
        .sum::<f64>()
        / m as f64;

    let mean = data.column_mean();
    let svd = atoms.clone().svd(true, true);
    let cutoff = 1e-10 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let mean_pose_code = svd
        .pseudo_inverse(cutoff)
        .map_err(|e| Error::Learning(format!("mean pose code: {e}")))?
        * &mean;

    let atom_mats = (0..k).map(|i| unstack(atoms.column(i), p)).collect();
    let dict = PoseDictionary::new(
        train.skeleton.clone(),
        atom_mats,
        config.atom_scale,
        train.mean_limb_length,
        mean_pose_code,
    )
    .map_err(|e| Error::Learning(e.to_string()))?
    .with_provenance(config.alpha, config.seed);
    Ok((dict, report))
}

/// `argmin_c ½‖pose − Σ c_i B_i‖² + α‖c‖₁`.
pub fn sparse_code(
    pose: &Matrix3xX<f64>,
    dict: &PoseDictionary,
    alpha: f64,
) -> Result<DVector<f64>> {
    if pose.ncols() != dict.joint_count() {
        return Err(Error::Dimension(format!(
            "pose has {} joints, dictionary has {}",
            pose.ncols(),
            dict.joint_count()
        )));
    }
    let atoms = stack(dict.atoms());
    let x = DMatrix::from_column_slice(pose.len(), 1, pose.as_slice());
    let (code, _) = code_all(
        &atoms,
        &x,
        &DMatrix::zeros(dict.k(), 1),
        alpha,
        20_000,
        1e-15,
    )?;
    Ok(code.column(0).clone_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn translation_is_removed() {
        let sk = Skeleton::chain(3).unwrap();
        let pose = Matrix3xX::from_column_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 0.0]);
        let mut moved = pose.clone();
        for mut c in moved.column_iter_mut() {
            c += Vector3::new(10.0, 20.0, 30.0);
        }
        let a = preprocess(std::slice::from_ref(&pose), &sk).unwrap();
        let b = preprocess(&[moved], &sk).unwrap();
        assert_eq!(a.poses[0], pose);
        assert!((&a.poses[0] - &b.poses[0]).abs().max() < 1e-12);
        assert!((a.mean_limb_length - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_edges_are_rejected() {
        let sk = Skeleton::chain(2).unwrap();
        let pose = Matrix3xX::zeros(2);
        assert!(matches!(preprocess(&[pose], &sk), Err(Error::Data(_))));
    }
}
