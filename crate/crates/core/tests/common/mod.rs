#![allow(dead_code)]

use d3po_core::diffusion::{
    Denoiser, DenoiserConfig, NoiseSchedule, Parameterization, ScheduleSpec,
};
use d3po_core::seeds;

pub fn tiny_config(side: usize, hidden: Vec<usize>) -> DenoiserConfig {
    DenoiserConfig {
        side,
        classes: 5,
        time_dim: 4,
        class_dim: 3,
        hidden,
        output: Parameterization::CleanImage,
        clip_x0: true,
    }
}

pub fn tiny_denoiser(side: usize, hidden: Vec<usize>, seed: u64) -> Denoiser {
    Denoiser::init(tiny_config(side, hidden), &mut seeds::rng(seed, "init", 0)).unwrap()
}

pub fn schedule(steps: usize) -> NoiseSchedule {
    NoiseSchedule::new(&ScheduleSpec {
        steps,
        ..ScheduleSpec::default()
    })
    .unwrap()
}
