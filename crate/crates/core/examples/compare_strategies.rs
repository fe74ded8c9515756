//! Compares aggregation strategies over the occlusion suite.
//!
//! ```text
//! cargo run --release --example compare_strategies
//! ```

use late_mvs::aggregation::{AggregationStrategy, Reducer};
use late_mvs::metrics::{compare_strategies, EvalScene};
use late_mvs::pipeline::CascadeConfig;
use late_mvs::scene::occlusion_suite;

fn main() -> late_mvs::Result<()> {
    let suite = occlusion_suite()?
        .iter()
        .map(|s| EvalScene::from_views(s.name.clone(), &s.render()?))
        .collect::<late_mvs::Result<Vec<_>>>()?;
    let mut strategies = vec![AggregationStrategy::EarlyVariance, AggregationStrategy::EarlyWeighted];
    strategies.extend(Reducer::ALL.map(|reducer| AggregationStrategy::LatePreserved { reducer }));
    let report = compare_strategies(&suite, &strategies, &CascadeConfig::default())?;
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}%", 100.0 * v));
    println!("{:<28} {:>10} {:>10} {:>10}", "strategy", "preserved", "agg-peak", "accuracy");
    for s in &report.summaries {
        println!(
            "{:<28} {:>10} {:>10} {:>10}",
            s.strategy,
            pct(s.preservation.value),
            pct(s.preservation_aggregated.value),
            pct(s.depth_accuracy.value)
        );
    }
    print!("{}", report.without_timings().to_csv()?);
    Ok(())
}
