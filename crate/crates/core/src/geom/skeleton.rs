use nalgebra::Matrix3xX;

use crate::error::{Error, Result};

/// A body part scored by PCP: two joint indices plus the group it is reported under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Limb {
    pub a: usize,
    pub b: usize,
    pub group: String,
}

impl Limb {
    pub fn new(a: usize, b: usize, group: impl Into<String>) -> Self {
        Self {
            a,
            b,
            group: group.into(),
        }
    }
}

/// Kinematic tree over `p` joints.
///
/// `edges` must form a spanning tree; they are the bones used for limb-length
/// statistics. `limbs` are the parts scored by PCP and need not coincide with
/// the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    names: Vec<String>,
    root: usize,
    edges: Vec<(usize, usize)>,
    limbs: Vec<Limb>,
}

impl Skeleton {
    pub fn new(
        names: Vec<String>,
        root: usize,
        edges: Vec<(usize, usize)>,
        limbs: Vec<Limb>,
    ) -> Result<Self> {
        let p = names.len();
        if p < 2 {
            return Err(Error::InvalidParams(format!(
                "skeleton needs at least 2 joints, got {p}"
            )));
        }
        if root >= p {
            return Err(Error::InvalidParams(format!(
                "root index {root} out of range for {p} joints"
            )));
        }
        if edges.len() != p - 1 {
            return Err(Error::InvalidParams(format!(
                "a tree over {p} joints has {} edges, got {}",
                p - 1,
                edges.len()
            )));
        }
        // union-find: p-1 edges without a cycle span all p joints
        let mut parent: Vec<usize> = (0..p).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for &(a, b) in &edges {
            if a >= p || b >= p || a == b {
                return Err(Error::InvalidParams(format!("invalid edge ({a}, {b})")));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(Error::InvalidParams(format!(
                    "edge ({a}, {b}) closes a cycle"
                )));
            }
            parent[ra] = rb;
        }
        for limb in &limbs {
            if limb.a >= p || limb.b >= p || limb.a == limb.b {
                return Err(Error::InvalidParams(format!(
                    "invalid limb ({}, {})",
                    limb.a, limb.b
                )));
            }
        }
        Ok(Self {
            names,
            root,
            edges,
            limbs,
        })
    }

    /// The 15-joint body used throughout the tests and the synthetic generator.
    pub fn human15() -> Self {
        let names = [
            "pelvis",
            "r_hip",
            "r_knee",
            "r_ankle",
            "l_hip",
            "l_knee",
            "l_ankle",
            "thorax",
            "head",
            "l_shoulder",
            "l_elbow",
            "l_wrist",
            "r_shoulder",
            "r_elbow",
            "r_wrist",
        ];
        let edges = vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (0, 4),
            (4, 5),
            (5, 6),
            (0, 7),
            (7, 8),
            (7, 9),
            (9, 10),
            (10, 11),
            (7, 12),
            (12, 13),
            (13, 14),
        ];
        let limbs = vec![
            Limb::new(9, 10, "upper_arm"),
            Limb::new(12, 13, "upper_arm"),
            Limb::new(10, 11, "lower_arm"),
            Limb::new(13, 14, "lower_arm"),
            Limb::new(1, 2, "upper_leg"),
            Limb::new(4, 5, "upper_leg"),
            Limb::new(2, 3, "lower_leg"),
            Limb::new(5, 6, "lower_leg"),
        ];
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            0,
            edges,
            limbs,
        )
        .expect("built-in skeleton is valid")
    }

    /// A simple chain `0 - 1 - ... - (p-1)` rooted at joint 0, every bone a limb.
    pub fn chain(p: usize) -> Result<Self> {
        let names = (0..p).map(|i| format!("j{i}")).collect();
        let edges: Vec<_> = (1..p).map(|i| (i - 1, i)).collect();
        let limbs = edges
            .iter()
            .map(|&(a, b)| Limb::new(a, b, "chain"))
            .collect();
        Self::new(names, 0, edges, limbs)
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn limbs(&self) -> &[Limb] {
        &self.limbs
    }

    /// Mean bone length of a single pose.
    pub fn mean_limb_length(&self, pose: &Matrix3xX<f64>) -> f64 {
        let total: f64 = self
            .edges
            .iter()
            .map(|&(a, b)| (pose.column(a) - pose.column(b)).norm())
            .sum();
        total / self.edges.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_cycles_and_bad_roots() {
        let names: Vec<String> = (0..3).map(|i| i.to_string()).collect();
        assert!(Skeleton::new(names.clone(), 0, vec![(0, 1), (1, 0)], vec![]).is_err());
        assert!(Skeleton::new(names.clone(), 3, vec![(0, 1), (1, 2)], vec![]).is_err());
        assert!(Skeleton::new(names.clone(), 0, vec![(0, 1)], vec![]).is_err());
        assert!(Skeleton::new(
            names.clone(),
            0,
            vec![(0, 1), (1, 2)],
            vec![Limb::new(0, 5, "x")]
        )
        .is_err());
        assert!(Skeleton::new(names, 0, vec![(0, 1), (1, 2)], vec![]).is_ok());
    }

    #[test]
    fn human15_shape() {
        let s = Skeleton::human15();
        assert_eq!(s.joint_count(), 15);
        assert_eq!(s.edges().len(), 14);
        assert_eq!(s.limbs().len(), 8);
    }

    #[test]
    fn mean_limb_length_of_chain() {
        let s = Skeleton::chain(3).unwrap();
        let pose = Matrix3xX::from_columns(&[
            nalgebra::Vector3::new(0.0, 0.0, 0.0),
            nalgebra::Vector3::new(3.0, 4.0, 0.0),
            nalgebra::Vector3::new(3.0, 4.0, 1.0),
        ]);
        assert!((s.mean_limb_length(&pose) - 3.0).abs() < 1e-15);
    }
}
