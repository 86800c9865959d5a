use std::path::Path;

use pixsim_core::bnn::{Backend, BinaryTensor, FirstLayer, HardwareModel, Image};
use pixsim_core::io::container::load_weights;
use pixsim_core::io::image::{feature_map_pgm, load_frame};
use pixsim_core::metrics::{
    architecture_reports, comm_bits, compression_ratio, csr_size, frame_time, Architecture, GeometrySpec, Parallelism,
    RatioOrientation, TimingConfig,
};
use pixsim_core::mtj::{fit_profile, read_entries_csv};
use pixsim_core::neuron::{redundancy_table, McEstimate};
use pixsim_core::reference::{first_layer_from_tensors, reference_layer};
use pixsim_core::rng::{derive_seed, stream};
use pixsim_core::{forward_first_layer, toy, Error, Result, SimConfig};
use serde_json::json;

use crate::output::OutputDir;
use crate::Format;

const SALT_FRAME: u64 = 0x4652;
const SALT_LINK_MAP: u64 = 0x4C4B;

pub const FRAME_BUDGET_S: f64 = 70e-6;

pub fn build_layer(cfg: &SimConfig) -> Result<FirstLayer> {
    match &cfg.weights_path {
        Some(p) => first_layer_from_tensors(&cfg.layer, &load_weights(p)?),
        None => reference_layer(&cfg.layer),
    }
}

pub fn hardware(cfg: &SimConfig) -> Result<HardwareModel> {
    Ok(HardwareModel {
        curve: cfg.curve.clone().into(),
        subtractor: cfg.subtractor,
        bank: cfg.bank,
        resistance: cfg.device.resistance,
        profile: cfg.device.profile()?.into(),
    })
}

/// I.i.d. map at the workload sparsity with the configured output shape.
pub fn workload_map(cfg: &SimConfig) -> BinaryTensor {
    let g = &cfg.geometry;
    let dims = (g.c_out as usize, g.h_out as usize, g.w_out as usize);
    BinaryTensor::random(
        dims,
        1.0 - cfg.workload.sparsity,
        &mut stream(derive_seed(cfg.seed, SALT_LINK_MAP), 0),
    )
}

pub fn simulate_frame(
    cfg: &SimConfig,
    out: &mut OutputDir,
    input: Option<&Path>,
    backend: Option<Backend>,
) -> Result<bool> {
    let layer = build_layer(cfg)?;
    let g = &cfg.geometry;
    let image = match input {
        Some(p) => load_frame(p)?,
        None => Image::random(
            g.c_in as usize,
            g.h_in as usize,
            g.w_in as usize,
            &mut stream(derive_seed(cfg.seed, SALT_FRAME), 0),
        ),
    };
    let backend = backend.unwrap_or(cfg.backend);
    let frame = forward_first_layer(&image, &layer, backend, &hardware(cfg)?, cfg.seed)?;
    let (c, h, w) = frame.bits.dims;
    let geometry = GeometrySpec {
        h_in: image.height as u64,
        w_in: image.width as u64,
        c_in: image.channels as u64,
        h_out: h as u64,
        w_out: w as u64,
        c_out: c as u64,
        ..cfg.geometry
    };
    let size = csr_size(&frame.bits);
    out.write("feature_map.pgm", &feature_map_pgm(&frame.bits)?)?;
    out.write_json(
        "frame_report.json",
        &json!({
            "backend": backend,
            "input_dims": [image.channels, image.height, image.width],
            "output_dims": [c, h, w],
            "sparsity": frame.sparsity,
            "active": frame.bits.count_ones(),
            "threshold_scale": frame.threshold_scale,
            "saturated": frame.saturated,
            "bank_stats": frame.bank_stats,
            "dense_bits": size.dense_bits,
            "csr_bits": size.csr_bits,
            "coded_bits": size.chosen(),
            "C": compression_ratio(&geometry, cfg.ratio_orientation)?,
            "sparse_C_effective": geometry.raw_input_bits() / size.chosen() as f64,
        }),
    )?;
    Ok(true)
}

fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

pub fn redundancy(cfg: &SimConfig, out: &mut OutputDir, format: Format) -> Result<bool> {
    let rows = redundancy_table(&cfg.redundancy, cfg.seed)?;
    let agree: Vec<bool> = rows
        .iter()
        .map(|r| {
            let hits = (r.mc_error * r.mc_trials as f64).round() as u64;
            McEstimate {
                hits,
                trials: r.mc_trials,
            }
            .agrees_with(r.analytic_error, 4.0)
        })
        .collect();
    match format {
        Format::Csv => {
            let mut text = String::from("n,p_switch,vote_threshold,mode,analytic_error,mc_error,mc_trials\n");
            for r in &rows {
                text.push_str(&csv_line(&[
                    r.n.to_string(),
                    r.p_switch.to_string(),
                    r.vote_threshold.to_string(),
                    r.mode.to_string(),
                    r.analytic_error.to_string(),
                    r.mc_error.to_string(),
                    r.mc_trials.to_string(),
                ]));
            }
            out.write("redundancy.csv", text.as_bytes())?;
        }
        Format::Json => {
            out.write_json("redundancy.json", &rows)?;
        }
    }
    let disagreeing: Vec<usize> = agree.iter().enumerate().filter(|(_, &a)| !a).map(|(i, _)| i).collect();
    out.write_json(
        "redundancy_summary.json",
        &json!({ "rows": rows.len(), "mc_within_4_sigma": disagreeing.is_empty(), "disagreeing_rows": disagreeing }),
    )?;
    Ok(disagreeing.is_empty())
}

pub fn error_sweep(cfg: &SimConfig, out: &mut OutputDir, format: Format) -> Result<bool> {
    let layer = build_layer(cfg)?;
    let result = toy::error_sweep(&layer, &cfg.sweep, cfg.seed)?;
    match format {
        Format::Csv => {
            let mut text = String::from("eps_10,eps_01,mean_accuracy,std_accuracy,seeds\n");
            for r in &result.rows {
                text.push_str(&csv_line(&[
                    r.eps_10.to_string(),
                    r.eps_01.to_string(),
                    r.mean_accuracy.to_string(),
                    r.std_accuracy.to_string(),
                    r.seeds.to_string(),
                ]));
            }
            out.write("error_sweep.csv", text.as_bytes())?;
        }
        Format::Json => {
            out.write_json("error_sweep.json", &result.rows)?;
        }
    }
    let violations = result.monotone_violations(cfg.sweep.monotone_tolerance);
    out.write_json(
        "error_sweep_summary.json",
        &json!({
            "clean_accuracy": result.clean_accuracy,
            "train_accuracy": result.train_accuracy,
            "monotone_tolerance": cfg.sweep.monotone_tolerance,
            "monotone_violations": violations,
        }),
    )?;
    Ok(violations.is_empty())
}

pub fn bandwidth(cfg: &SimConfig, out: &mut OutputDir) -> Result<bool> {
    let g = &cfg.geometry;
    let map = workload_map(cfg);
    let size = csr_size(&map);
    let pooled = g.pooled(2);
    out.write_json(
        "bandwidth.json",
        &json!({
            "geometry": g,
            "orientation": cfg.ratio_orientation,
            "C": compression_ratio(g, cfg.ratio_orientation)?,
            "C_input_over_output": compression_ratio(g, RatioOrientation::InputOverOutput)?,
            "C_as_printed": compression_ratio(g, RatioOrientation::AsPrinted)?,
            "C_pooled_2x2": compression_ratio(&pooled, RatioOrientation::InputOverOutput)?,
            "raw_input_bits": g.raw_input_bits(),
            "workload_sparsity": cfg.workload.sparsity,
            "measured_sparsity": map.sparsity(),
            "dense_bits": size.dense_bits,
            "csr_bits": size.csr_bits,
            "coded_bits": size.chosen(),
            "sparse_C_effective": g.raw_input_bits() / size.chosen() as f64,
        }),
    )?;
    Ok(true)
}

pub fn energy(cfg: &SimConfig, out: &mut OutputDir, format: Format) -> Result<bool> {
    let coded = csr_size(&workload_map(cfg)).chosen() as f64;
    let replicas = match cfg.energy.vote_locality {
        pixsim_core::metrics::VoteLocality::OnChip => 1.0,
        pixsim_core::metrics::VoteLocality::OffChip => cfg.energy.replicas as f64,
    };
    let reports = architecture_reports(
        &cfg.energy,
        &cfg.timing,
        &cfg.geometry,
        &cfg.workload,
        Some(coded * replicas),
    )?;
    match format {
        Format::Json => {
            out.write_json("energy.json", &reports)?;
        }
        Format::Csv => {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let mut text = String::from(
                "architecture,frontend_J,comm_J,ratio_vs_baseline,comm_ratio_vs_baseline,C,sparse_C_effective,frame_time_s,fps\n",
            );
            for r in &reports {
                text.push_str(&csv_line(&[
                    format!("{:?}", r.architecture),
                    r.frontend_j.to_string(),
                    r.comm_j.to_string(),
                    r.ratio_vs_baseline.to_string(),
                    r.comm_ratio_vs_baseline.to_string(),
                    r.c.to_string(),
                    opt(r.sparse_c_effective),
                    opt(r.frame_time_s),
                    opt(r.fps),
                ]));
            }
            out.write("energy.csv", text.as_bytes())?;
        }
    }
    let dense = comm_bits(&cfg.energy, &cfg.geometry, Architecture::InPixel);
    out.write_json(
        "energy_link.json",
        &json!({ "energy_label": cfg.energy.label, "inpixel_dense_bits": dense, "inpixel_coded_bits": coded * replicas }),
    )?;
    Ok(true)
}

pub fn timing(cfg: &SimConfig, out: &mut OutputDir) -> Result<bool> {
    let t = &cfg.timing;
    let ft = frame_time(t, &cfg.geometry);
    let serial = frame_time(
        &TimingConfig {
            parallelism: Parallelism::Serial,
            ..*t
        },
        &cfg.geometry,
    );
    let (phases, ch, rep) = (t.n_int_phases as f64, t.n_channels as f64, t.n_replicas as f64);
    out.write_json(
        "timing.json",
        &json!({
            "frame_time_s": ft.frame_time_s,
            "fps": ft.fps,
            "budget_s": FRAME_BUDGET_S,
            "within_budget": ft.frame_time_s < FRAME_BUDGET_S,
            "parallelism": t.parallelism,
            "breakdown_s": {
                "integration": phases * t.t_int,
                "channel_settle": ch * t.t_channel_settle * phases,
                "write": ch * rep * t.t_write,
                "read_reset": ch * rep * (t.t_read + t.t_reset),
            },
            "serial_kernel_groups_frame_time_s": serial.frame_time_s,
        }),
    )?;
    Ok(true)
}

pub fn device_fit(cfg: &SimConfig, out: &mut OutputDir, input: &Path) -> Result<bool> {
    let file = std::fs::File::open(input).map_err(|e| Error::io(input, e))?;
    let samples = read_entries_csv(file)?;
    let (profile, summary) = fit_profile(&samples, cfg.device.interpolation)?;
    out.write("profile.csv", profile.to_csv_string().as_bytes())?;
    out.write_json(
        "fit_report.json",
        &json!({
            "summary": summary,
            "interpolation": profile.interpolation(),
            "write_threshold_v": profile.write_threshold(),
        }),
    )?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pixsim_core::toy::SweepConfig;

    fn read_json(dir: &Path, name: &str) -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(dir.join(name)).unwrap()).unwrap()
    }

    #[test]
    fn redundancy_csv_has_one_row_per_case() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SimConfig::default();
        cfg.redundancy.mc_trials = 20_000;
        let mut out = OutputDir::create(dir.path()).unwrap();
        assert!(redundancy(&cfg, &mut out, Format::Csv).unwrap());
        let text = std::fs::read_to_string(dir.path().join("redundancy.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "n,p_switch,vote_threshold,mode,analytic_error,mc_error,mc_trials"
        );
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), cfg.redundancy.n_values.len() * cfg.redundancy.points.len());
        let n8: Vec<_> = rows.iter().filter(|r| r[0] == "8").collect();
        assert_eq!(n8.len(), 2);
        assert!(n8.iter().all(|r| r[2] == "4" && r[4].parse::<f64>().unwrap() < 1e-3));
    }

    #[test]
    fn bandwidth_reports_the_three_orientations() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        bandwidth(&SimConfig::default(), &mut out).unwrap();
        let v = read_json(dir.path(), "bandwidth.json");
        assert!((v["C"].as_f64().unwrap() - 6.0).abs() < 1e-12);
        assert!((v["C_pooled_2x2"].as_f64().unwrap() - 24.0).abs() < 1e-12);
        assert!((v["C_as_printed"].as_f64().unwrap() - 128.0 / 3.0).abs() < 1e-9);
        assert_eq!(v["coded_bits"], v["dense_bits"]);
    }

    #[test]
    fn timing_and_energy_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig::default();
        let mut out = OutputDir::create(dir.path()).unwrap();
        timing(&cfg, &mut out).unwrap();
        energy(&cfg, &mut out, Format::Csv).unwrap();
        let t = read_json(dir.path(), "timing.json");
        assert_eq!(t["within_budget"], true);
        let csv = std::fs::read_to_string(dir.path().join("energy.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let inpixel = csv.lines().find(|l| l.starts_with("InPixel")).unwrap();
        let ratio: f64 = inpixel.split(',').nth(3).unwrap().parse().unwrap();
        assert!((ratio - 8.2).abs() / 8.2 < 0.05, "{ratio}");
    }

    #[test]
    fn simulate_frame_writes_a_binary_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SimConfig::default();
        cfg.geometry.h_in = 33;
        cfg.geometry.w_in = 33;
        let mut out = OutputDir::create(dir.path()).unwrap();
        simulate_frame(&cfg, &mut out, None, Some(Backend::Ideal)).unwrap();
        let pgm = std::fs::read(dir.path().join("feature_map.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5"));
        let v = read_json(dir.path(), "frame_report.json");
        assert_eq!(v["output_dims"], json!([32, 16, 16]));
        assert_eq!(v["saturated"], 0);
    }

    #[test]
    fn device_fit_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("measured.csv");
        std::fs::write(
            &input,
            "initial_state,voltage_v,pulse_width_s,p_switch\n\
             AP,0.5,7e-10,0.0\nAP,0.8,7e-10,0.9\nAP,0.8,7e-10,0.94\nAP,0.9,7e-10,0.9\n\
             P,0.5,5e-10,0.0\nP,0.9,5e-10,0.97\n",
        )
        .unwrap();
        let mut out = OutputDir::create(dir.path().join("out")).unwrap();
        device_fit(&SimConfig::default(), &mut out, &input).unwrap();
        let v = read_json(&dir.path().join("out"), "fit_report.json");
        assert_eq!(v["summary"]["samples"], 6);
        assert_eq!(v["summary"]["knots"], 5);
        assert_eq!(v["summary"]["adjusted_knots"], 2);
        let refit = std::fs::File::open(dir.path().join("out/profile.csv")).unwrap();
        assert_eq!(read_entries_csv(refit).unwrap().len(), 5);
    }

    #[test]
    fn error_sweep_summary_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig {
            sweep: SweepConfig {
                eps_grid: vec![0.0, 0.2],
                seeds: 1,
                train_samples: 300,
                test_samples: 100,
                epochs: 3,
                ..SweepConfig::default()
            },
            ..SimConfig::default()
        };
        let mut out = OutputDir::create(dir.path()).unwrap();
        error_sweep(&cfg, &mut out, Format::Json).unwrap();
        let rows = read_json(dir.path(), "error_sweep.json");
        assert_eq!(rows.as_array().unwrap().len(), 4);
        let summary = read_json(dir.path(), "error_sweep_summary.json");
        assert!(summary["clean_accuracy"].as_f64().unwrap() > 10.0);
    }
}
