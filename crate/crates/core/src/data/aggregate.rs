use super::{CleanSeries, RawSeries, AGG_STEP, RAW_STEP};
use crate::error::DataError;

/// Averages complete 15-minute blocks of an imputed 5-minute series.
///
/// Blocks are aligned to wall-clock quarter hours; a block missing any of its
/// three slots (partial head or tail) is dropped.
pub fn aggregate_15min(series: &RawSeries) -> Result<CleanSeries, DataError> {
    let per_block = (AGG_STEP / RAW_STEP) as usize;
    let mut blocks: Vec<(i64, f64)> = Vec::new();
    let mut current: Option<(i64, f64, usize)> = None;
    for (i, o) in series.observations().iter().enumerate() {
        let flow = o.flow.ok_or(DataError::Parse {
            line: i as u64 + 1,
            message: "aggregation requires an imputed series".into(),
        })?;
        let block = o.timestamp.div_euclid(AGG_STEP) * AGG_STEP;
        match &mut current {
            Some((b, sum, n)) if *b == block => {
                *sum += flow;
                *n += 1;
            }
            _ => {
                if let Some((b, sum, n)) = current.take() {
                    if n == per_block {
                        blocks.push((b, sum / n as f64));
                    }
                }
                current = Some((block, flow, 1));
            }
        }
    }
    if let Some((b, sum, n)) = current {
        if n == per_block {
            blocks.push((b, sum / n as f64));
        }
    }

    let Some(&(start, _)) = blocks.first() else {
        return Err(DataError::EmptyAfterAggregation);
    };
    for (i, (ts, _)) in blocks.iter().enumerate() {
        if *ts != start + AGG_STEP * i as i64 {
            return Err(DataError::NotContiguous(i));
        }
    }
    CleanSeries::new(
        series.station_id.clone(),
        start,
        blocks.into_iter().map(|(_, v)| v).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;

    fn raw(start: i64, values: &[f64]) -> RawSeries {
        let obs = values
            .iter()
            .enumerate()
            .map(|(i, &v)| Observation {
                timestamp: start + i as i64 * RAW_STEP,
                flow: Some(v),
            })
            .collect();
        RawSeries::new("s", obs).unwrap()
    }

    #[test]
    fn mean_of_triple() {
        let c = aggregate_15min(&raw(0, &[10.0, 20.0, 30.0])).unwrap();
        assert_eq!(c.values(), &[20.0]);
        assert_eq!(c.start(), 0);
    }

    #[test]
    fn constant_series_shrinks_by_three() {
        let c = aggregate_15min(&raw(0, &[7.0; 30])).unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.values().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn partial_blocks_dropped() {
        // Starts at :05, so the first two slots form a partial block; the last slot too.
        let c = aggregate_15min(&raw(300, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        assert_eq!(c.values(), &[4.0]);
        assert_eq!(c.start(), 900);
        assert!(matches!(
            aggregate_15min(&raw(300, &[1.0, 2.0])),
            Err(DataError::EmptyAfterAggregation)
        ));
    }

    #[test]
    fn thirty_days() {
        let c = aggregate_15min(&raw(0, &vec![1.0; 30 * 288])).unwrap();
        assert_eq!(c.len(), 30 * 96);
    }

    #[test]
    fn rejects_missing() {
        let s = RawSeries::new(
            "s",
            vec![Observation {
                timestamp: 0,
                flow: None,
            }],
        )
        .unwrap();
        assert!(aggregate_15min(&s).is_err());
    }
}
