//! Scalar expressions in the age variable `a`, e.g. `"min(a, 2)"`.

use std::sync::Arc;

use crate::{Error, Result};

thread_local! {
    static BUILTINS: meval::Context<'static> = meval::Context::new();
}

pub(crate) type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub(crate) fn compile(source: &str) -> Result<ScalarFn> {
    let expr: meval::Expr = source.parse().map_err(|e: meval::Error| Error::Expression {
        expr: source.to_string(),
        reason: e.to_string(),
    })?;
    // Reject unknown variables and functions up front.
    BUILTINS
        .with(|ctx| expr.eval_with_context((("a", 0.5), ctx)))
        .map_err(|e| Error::Expression {
            expr: source.to_string(),
            reason: e.to_string(),
        })?;
    Ok(Arc::new(move |a| {
        BUILTINS.with(|ctx| expr.eval_with_context((("a", a), ctx)).unwrap_or(f64::NAN))
    }))
}
