use mosfuse_core::io::write_json;
use mosfuse_core::metrics::evaluate;
use mosfuse_core::scores::read_scores;

use super::manifest;
use crate::args::EvalArgs;
use crate::error::CliResult;

pub fn eval(a: &EvalArgs) -> CliResult {
    let d = manifest(&a.manifest)?;
    let name = a.pred.display().to_string();
    let pred = read_scores(&a.pred)?.aligned(&d, &name)?;
    let report = evaluate(&pred, &d)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if a.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?
        );
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}
