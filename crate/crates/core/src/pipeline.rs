//! Scan-by-scan orchestration of the segmentation stages.

use std::time::{Duration, Instant};

use crate::config::{Config, Mode};
use crate::detection::{
    classify_dynamic, convolve_scores, dilate, extract_changes, label_points, otsu_threshold,
    DelayedBuffer, DelayedEntry, TemporalDynamicMap,
};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::integration::{integrate_scan, VoxelizedScan};
use crate::io::{LabelVector, Scan};
use crate::transition::TransitionModel;
use crate::voxel_map::VoxelMap;

/// Labels ready to be written for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub index: u64,
    pub labels: LabelVector,
}

/// Diagnostics for one processed scan.
#[derive(Debug, Clone)]
pub struct ScanReport {
    pub index: u64,
    pub observed: usize,
    pub changes: usize,
    pub threshold: u32,
    pub dynamic_voxels: usize,
    pub dynamic_points: usize,
    pub map_size: usize,
    pub tdm_size: usize,
    pub elapsed: Duration,
}

pub struct Pipeline {
    config: Config,
    model: TransitionModel,
    map: VoxelMap,
    tdm: TemporalDynamicMap,
    delayed: Option<DelayedBuffer>,
    processed: u64,
    latencies: Vec<Duration>,
}

impl Pipeline {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let model = TransitionModel::new(config.self_transition)?;
        let delayed = (config.mode == Mode::Delayed).then(|| DelayedBuffer::new(config.w_local));
        Ok(Pipeline {
            map: VoxelMap::new(config.delta),
            tdm: TemporalDynamicMap::new(config.w_dynamic),
            model,
            delayed,
            processed: 0,
            latencies: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn map(&self) -> &VoxelMap {
        &self.map
    }

    /// Runs every stage on one scan. Returns its report and whichever labels
    /// became final: the scan itself in online mode, the scan `w_local` back
    /// in delayed mode.
    pub fn process(&mut self, scan: &Scan, pose: &Pose) -> Result<(ScanReport, Vec<ScanOutput>)> {
        let start = Instant::now();
        let cfg = &self.config;
        let k = self.processed;

        let vscan = VoxelizedScan::build(scan, pose, cfg.delta, cfg.min_range)?;
        let obs = integrate_scan(&mut self.map, &vscan, cfg, &self.model, k);
        let changes = extract_changes(&vscan, &self.map, k, cfg.w_local);
        let scores = convolve_scores(&vscan, &self.map, k, cfg.kernel_size, cfg.w_local);
        let threshold = otsu_threshold(&scores, cfg.otsu_min);
        let dynamic = classify_dynamic(&scores, threshold, &mut self.tdm, k);
        let dynamic = dilate(&dynamic, cfg.dilation_radius, &vscan.key_set());
        let labels = label_points(&vscan, &dynamic);
        if labels.len() != scan.len() {
            return Err(Error::Invariant(format!(
                "scan {} produced {} labels for {} points",
                scan.index,
                labels.len(),
                scan.len()
            )));
        }

        let dynamic_points = labels.iter().filter(|l| l.is_dynamic()).count();
        let outputs = match &mut self.delayed {
            None => vec![ScanOutput {
                index: scan.index,
                labels,
            }],
            Some(buf) => {
                buf.push(DelayedEntry::new(
                    scan.index,
                    &vscan,
                    labels,
                    dynamic.clone(),
                ));
                buf.pop_ready()
                    .map(|(index, labels)| ScanOutput { index, labels })
                    .into_iter()
                    .collect()
            }
        };

        self.processed += 1;
        let elapsed = start.elapsed();
        self.latencies.push(elapsed);
        let report = ScanReport {
            index: scan.index,
            observed: obs.len(),
            changes: changes.keys.len(),
            threshold,
            dynamic_voxels: dynamic.len(),
            dynamic_points,
            map_size: self.map.len(),
            tdm_size: self.tdm.len(),
            elapsed,
        };
        log::debug!(
            "scan {}: {} observed, {} seeds, threshold {}, {} dynamic voxels, map {}, tdm {}, {:.1} ms",
            report.index,
            report.observed,
            report.changes,
            report.threshold,
            report.dynamic_voxels,
            report.map_size,
            report.tdm_size,
            elapsed.as_secs_f64() * 1e3
        );
        Ok((report, outputs))
    }

    /// Flushes delayed-mode scans whose lookahead will never fill.
    pub fn finish(&mut self) -> Vec<ScanOutput> {
        let mut out = Vec::new();
        if let Some(buf) = &mut self.delayed {
            while let Some((index, labels)) = buf.pop_final() {
                out.push(ScanOutput { index, labels });
            }
        }
        out
    }

    pub fn latency(&self) -> LatencySummary {
        LatencySummary::from_samples(&self.latencies)
    }
}

/// Mean and 95th percentile of per-scan processing time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencySummary {
    pub scans: usize,
    pub mean: Duration,
    pub p95: Duration,
    pub max: Duration,
}

impl LatencySummary {
    pub fn from_samples(samples: &[Duration]) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort();
        let total: Duration = sorted.iter().sum();
        let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        LatencySummary {
            scans: sorted.len(),
            mean: total / sorted.len() as u32,
            p95: sorted[rank - 1],
            max: sorted[sorted.len() - 1],
        }
    }
}

/// Processes a whole in-memory sequence and returns labels in scan order.
pub fn run_sequence(
    config: &Config,
    scans: &[Scan],
    poses: &[Pose],
) -> Result<(Vec<LabelVector>, LatencySummary)> {
    if scans.len() != poses.len() {
        return Err(Error::InvalidInput(format!(
            "{} scans but {} poses",
            scans.len(),
            poses.len()
        )));
    }
    let mut pipeline = Pipeline::new(config.clone())?;
    let mut labels: Vec<Option<LabelVector>> = vec![None; scans.len()];
    let mut place = |outputs: Vec<ScanOutput>| -> Result<()> {
        for o in outputs {
            let slot = scans
                .iter()
                .position(|s| s.index == o.index)
                .ok_or_else(|| Error::Invariant(format!("output for unknown scan {}", o.index)))?;
            labels[slot] = Some(o.labels);
        }
        Ok(())
    };
    for (scan, pose) in scans.iter().zip(poses) {
        let (_, outputs) = pipeline.process(scan, pose)?;
        place(outputs)?;
    }
    place(pipeline.finish())?;
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Invariant(format!("no labels emitted for scan {i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((labels, pipeline.latency()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn wall_scan(index: u64, offset: f64) -> Scan {
        let pts = (-10..=10)
            .flat_map(|y| {
                (-10..=10).map(move |z| Vector3::new(4.0 + offset, y as f64 * 0.1, z as f64 * 0.1))
            })
            .collect();
        Scan::new(index, pts)
    }

    #[test]
    fn latency_summary() {
        let ms = |v: u64| Duration::from_millis(v);
        let s = LatencySummary::from_samples(&(1..=20).map(ms).collect::<Vec<_>>());
        assert_eq!(s.p95, ms(19));
        assert_eq!(s.max, ms(20));
        assert_eq!(s.mean, Duration::from_micros(10_500));
        assert_eq!(LatencySummary::from_samples(&[]).scans, 0);
    }

    #[test]
    fn static_wall_stays_static() {
        let scans: Vec<Scan> = (0..10).map(|i| wall_scan(i, 0.0)).collect();
        let poses = vec![Pose::identity(); scans.len()];
        for mode in [Mode::Online, Mode::Delayed] {
            let cfg = Config {
                mode,
                ..Config::default()
            };
            let (labels, _) = run_sequence(&cfg, &scans, &poses).unwrap();
            assert_eq!(labels.len(), 10);
            assert!(labels.iter().flatten().all(|l| !l.is_dynamic()));
        }
    }

    #[test]
    fn delayed_mode_emits_with_lag() {
        let cfg = Config {
            mode: Mode::Delayed,
            ..Config::default()
        };
        let mut p = Pipeline::new(cfg).unwrap();
        let mut emitted = Vec::new();
        for i in 0..5 {
            let (_, out) = p.process(&wall_scan(i, 0.0), &Pose::identity()).unwrap();
            emitted.push(out.iter().map(|o| o.index).collect::<Vec<_>>());
        }
        assert_eq!(emitted, vec![vec![], vec![], vec![], vec![0], vec![1]]);
        let tail: Vec<u64> = p.finish().iter().map(|o| o.index).collect();
        assert_eq!(tail, vec![2, 3, 4]);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(run_sequence(&Config::default(), &[wall_scan(0, 0.0)], &[]).is_err());
    }
}
