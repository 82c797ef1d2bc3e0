//! Independent pairing of two models: `L = L_A · L_B`.

use crate::error::Result;
use crate::ghmm::{Ghmm, LogLikDerivs, SampledPath};
use crate::montecarlo::StreamKey;

/// How the two components draw randomness during simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPolicy {
    /// Both components use the same stream as a standalone run with the parent key.
    Shared,
    /// Component A uses the parent key, component B a derived child stream.
    Independent,
}

#[derive(Debug, Clone)]
pub struct ProductModel<A, B> {
    pub a: A,
    pub b: B,
    pub streams: StreamPolicy,
}

impl<A: Ghmm, B: Ghmm> ProductModel<A, B> {
    pub fn new(a: A, b: B, streams: StreamPolicy) -> Self {
        Self { a, b, streams }
    }

    pub fn split<'t>(&self, theta: &'t [f64]) -> (&'t [f64], &'t [f64]) {
        theta.split_at(self.a.param_dim())
    }

    /// Stream used by component B for a run keyed by `key`.
    pub fn key_b(&self, key: StreamKey) -> StreamKey {
        match self.streams {
            StreamPolicy::Shared => key,
            StreamPolicy::Independent => key.child(1),
        }
    }
}

fn block_diag(a: &LogLikDerivs, b: &LogLikDerivs, qa: usize, qb: usize) -> LogLikDerivs {
    let q = qa + qb;
    let score = a.score.iter().chain(&b.score).copied().collect();
    let hessian = if a.hessian.is_empty() && b.hessian.is_empty() {
        Vec::new()
    } else {
        let mut h = vec![0.0; q * q];
        for i in 0..qa {
            for j in 0..qa {
                h[i * q + j] = a.hessian[i * qa + j];
            }
        }
        for i in 0..qb {
            for j in 0..qb {
                h[(qa + i) * q + qa + j] = b.hessian[i * qb + j];
            }
        }
        h
    };
    LogLikDerivs { score, hessian }
}

impl<A: Ghmm, B: Ghmm> Ghmm for ProductModel<A, B> {
    type Obs = (A::Obs, B::Obs);
    type Params = (A::Params, B::Params);
    type Filter = (A::Filter, B::Filter);
    type Sens = (A::Sens, B::Sens);

    fn param_dim(&self) -> usize {
        self.a.param_dim() + self.b.param_dim()
    }

    fn max_order(&self) -> usize {
        self.a.max_order().min(self.b.max_order())
    }

    fn bind(&self, theta: &[f64], order: usize) -> Result<Self::Params> {
        self.check_dim(theta)?;
        self.check_order(order)?;
        let (ta, tb) = self.split(theta);
        Ok((self.a.bind(ta, order)?, self.b.bind(tb, order)?))
    }

    fn filter_init(&self, p: &Self::Params, y0: &Self::Obs) -> Result<(Self::Filter, f64)> {
        let (fa, ia) = self.a.filter_init(&p.0, &y0.0)?;
        let (fb, ib) = self.b.filter_init(&p.1, &y0.1)?;
        Ok(((fa, fb), ia + ib))
    }

    fn filter_update(
        &self,
        p: &Self::Params,
        f: &Self::Filter,
        yp: &Self::Obs,
        y: &Self::Obs,
    ) -> Result<(Self::Filter, f64)> {
        let (fa, ia) = self.a.filter_update(&p.0, &f.0, &yp.0, &y.0)?;
        let (fb, ib) = self.b.filter_update(&p.1, &f.1, &yp.1, &y.1)?;
        Ok(((fa, fb), ia + ib))
    }

    fn sens_init(&self, p: &Self::Params, y0: &Self::Obs) -> Result<(Self::Sens, f64)> {
        let (sa, ia) = self.a.sens_init(&p.0, &y0.0)?;
        let (sb, ib) = self.b.sens_init(&p.1, &y0.1)?;
        Ok(((sa, sb), ia + ib))
    }

    fn sens_update(
        &self,
        p: &Self::Params,
        s: &Self::Sens,
        yp: &Self::Obs,
        y: &Self::Obs,
    ) -> Result<(Self::Sens, f64)> {
        let (sa, ia) = self.a.sens_update(&p.0, &s.0, &yp.0, &y.0)?;
        let (sb, ib) = self.b.sens_update(&p.1, &s.1, &yp.1, &y.1)?;
        Ok(((sa, sb), ia + ib))
    }

    fn sens_derivs(&self, p: &Self::Params, s: &Self::Sens) -> LogLikDerivs {
        block_diag(
            &self.a.sens_derivs(&p.0, &s.0),
            &self.b.sens_derivs(&p.1, &s.1),
            self.a.param_dim(),
            self.b.param_dim(),
        )
    }

    fn simulate(
        &self,
        p: &Self::Params,
        n: usize,
        key: StreamKey,
        x0: Option<usize>,
    ) -> Result<SampledPath<Self::Obs>> {
        let pa = self.a.simulate(&p.0, n, key, x0)?;
        let pb = self.b.simulate(&p.1, n, self.key_b(key), None)?;
        Ok(SampledPath {
            obs: pa.obs.into_iter().zip(pb.obs).collect(),
            hidden: None,
        })
    }
}
