use super::{EnvStep, Environment};
use crate::error::{Error, Result};

/// Exposes a fixed table of the inner environment's actions as indices.
#[derive(Debug, Clone)]
pub struct DiscreteActions<E: Environment> {
    inner: E,
    table: Vec<E::Action>,
}

impl<E: Environment> DiscreteActions<E> {
    pub fn new(inner: E, table: Vec<E::Action>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::EnvInput("empty action table".into()));
        }
        Ok(Self { inner, table })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn action_count(&self) -> usize {
        self.table.len()
    }

    pub fn table(&self) -> &[E::Action] {
        &self.table
    }
}

/// Stop plus `headings` evenly spaced unit directions scaled to `speed`.
pub fn heading_table(headings: usize, speed: f64) -> Vec<Vec<f64>> {
    std::iter::once(vec![0.0, 0.0])
        .chain((0..headings).map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / headings as f64;
            vec![speed * a.cos(), speed * a.sin()]
        }))
        .collect()
}

impl<E: Environment> Environment for DiscreteActions<E> {
    type Obs = E::Obs;
    type Action = usize;

    fn constraint_count(&self) -> usize {
        self.inner.constraint_count()
    }

    fn reset(&mut self, seed: u64) -> E::Obs {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &usize) -> Result<EnvStep<E::Obs>> {
        let a = self
            .table
            .get(*action)
            .ok_or_else(|| Error::EnvInput(format!("action {action} outside {} entries", self.table.len())))?;
        self.inner.step(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{PointNav2D, PointNav2DConfig};

    fn nav() -> PointNav2D {
        PointNav2D::new(PointNav2DConfig {
            workspace: [[0.0, 0.0], [4.0, 4.0]],
            goal: [3.5, 2.0],
            goal_radius: 0.2,
            start_box: [[1.0, 2.0], [1.0, 2.0]],
            obstacles: vec![],
            boundary_margin: 0.2,
            dt: 0.1,
            max_speed: 1.0,
            time_penalty: 0.0,
            max_steps: 10,
        })
        .unwrap()
    }

    #[test]
    fn heading_table_shape() {
        let t = heading_table(8, 2.0);
        assert_eq!(t.len(), 9);
        assert_eq!(t[0], vec![0.0, 0.0]);
        assert!((t[1][0] - 2.0).abs() < 1e-12 && t[1][1].abs() < 1e-12);
        for a in &t[1..] {
            assert!(((a[0] * a[0] + a[1] * a[1]).sqrt() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn steps_follow_table() {
        let mut env = DiscreteActions::new(nav(), heading_table(4, 1.0)).unwrap();
        env.reset(0);
        env.step(&1).unwrap();
        let p = env.inner().state().pos;
        assert!((p[0] - 1.1).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12);
        assert!(matches!(env.step(&5), Err(Error::EnvInput(_))));
        assert!(DiscreteActions::new(nav(), vec![]).is_err());
    }
}
