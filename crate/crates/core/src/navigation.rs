//! Epoch-by-epoch GNSS filter: predict, correct observations, optionally
//! mix pseudoranges and add the track constraint, then run the IEKF update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    iekf_update, predict, IekfConfig, MeasurementBlock, ProcessNoise, StateEstimate,
    TransitionModel, UpdateDiagnostics,
};
use crate::gnss::{correct_observation, doppler_block, pseudorange_block, CorrectedObservation};
use crate::mixing::mix_epoch;
use crate::sim::EpochRecord;
use crate::track::{constraint_from_point, SoftConstraintConfig, TrackMap};

/// Optional processing stages, the two axes of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Features {
    pub mixing: bool,
    pub soft_constraint: bool,
}

impl Features {
    pub const BASELINE: Self = Self::new(false, false);
    pub const MIXING: Self = Self::new(true, false);
    pub const CONSTRAINT: Self = Self::new(false, true);
    pub const MIXING_CONSTRAINT: Self = Self::new(true, true);

    /// All four variants, best-expected first.
    pub const ALL: [Self; 4] = [
        Self::MIXING_CONSTRAINT,
        Self::MIXING,
        Self::CONSTRAINT,
        Self::BASELINE,
    ];

    pub const fn new(mixing: bool, soft_constraint: bool) -> Self {
        Self {
            mixing,
            soft_constraint,
        }
    }

    pub fn label(&self) -> &'static str {
        match (self.mixing, self.soft_constraint) {
            (false, false) => "baseline",
            (true, false) => "mixing",
            (false, true) => "constraint",
            (true, true) => "mixing_constraint",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.label() == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub iekf: IekfConfig,
    pub process_noise: ProcessNoise,
    /// Range-rate noise variance, (m/s)^2.
    pub doppler_variance: f64,
    pub constraint: SoftConstraintConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            iekf: IekfConfig::default(),
            process_noise: ProcessNoise::default(),
            doppler_variance: 0.05,
            constraint: SoftConstraintConfig::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        self.iekf.validate()?;
        self.constraint.validate()?;
        if !(self.doppler_variance > 0.0) {
            return Err(Error::contract("doppler variance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSolution {
    pub time: f64,
    pub estimate: StateEstimate,
    pub diagnostics: UpdateDiagnostics,
    pub constraint_active: bool,
    pub satellites_used: usize,
}

/// Filter state machine over a sequence of epochs.
pub struct NavigationFilter<'a> {
    config: &'a FilterConfig,
    features: Features,
    map: Option<&'a TrackMap>,
    state: StateEstimate,
    last_time: Option<f64>,
}

impl<'a> NavigationFilter<'a> {
    pub fn new(
        initial: StateEstimate,
        config: &'a FilterConfig,
        features: Features,
        map: Option<&'a TrackMap>,
    ) -> Result<Self> {
        config.validate()?;
        initial.validate()?;
        if features.soft_constraint && map.is_none() {
            return Err(Error::contract("soft constraint enabled without a track map"));
        }
        Ok(Self {
            config,
            features,
            map,
            state: initial,
            last_time: None,
        })
    }

    pub fn state(&self) -> &StateEstimate {
        &self.state
    }

    /// Processes one epoch. The first epoch is updated against the initial
    /// estimate directly; later epochs are predicted forward first.
    pub fn step(&mut self, epoch: &EpochRecord) -> Result<EpochSolution> {
        let prior = match self.last_time {
            None => self.state.clone(),
            Some(t) => {
                let dt = epoch.time - t;
                let model = TransitionModel::constant_velocity(dt, &self.config.process_noise)?;
                predict(&self.state, &model)?
            }
        };

        let corrected = self.correct(epoch, &prior)?;
        let mut blocks = self.gnss_blocks(&corrected, &prior)?;
        let map = self.map.filter(|_| self.features.soft_constraint);

        let (estimate, diagnostics, constraint_active) = match map {
            Some(map) => self.constrained_update(&prior, &mut blocks, map)?,
            None if blocks.is_empty() => (prior.clone(), UpdateDiagnostics::default(), false),
            None => {
                let (post, diag) = iekf_update(&prior, &blocks, &self.config.iekf)?;
                (post, diag, false)
            }
        };

        self.state = estimate.clone();
        self.last_time = Some(epoch.time);
        Ok(EpochSolution {
            time: epoch.time,
            estimate,
            diagnostics,
            constraint_active,
            satellites_used: corrected.len(),
        })
    }

    fn correct(&self, epoch: &EpochRecord, prior: &StateEstimate) -> Result<Vec<CorrectedObservation>> {
        let receiver = prior.position();
        let mut out = Vec::with_capacity(epoch.observations.len());
        for obs in &epoch.observations {
            match correct_observation(obs, &receiver) {
                Ok(c) => out.push(c),
                Err(Error::Satellite { source, .. }) if matches!(*source, Error::BelowHorizon { .. }) => {
                    log::warn!("t={}: satellite {} below the horizon, skipped", epoch.time, obs.sat_id);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    fn gnss_blocks(
        &self,
        corrected: &[CorrectedObservation],
        prior: &StateEstimate,
    ) -> Result<Vec<MeasurementBlock>> {
        let mut blocks = Vec::new();
        if corrected.is_empty() {
            return Ok(blocks);
        }
        let positions: Vec<_> = corrected.iter().map(|c| c.sat_position).collect();
        let (values, variances): (Vec<f64>, Vec<f64>) = if self.features.mixing {
            mix_epoch(corrected, prior)?
                .into_iter()
                .map(|m| (m.mean, m.variance))
                .unzip()
        } else {
            corrected
                .iter()
                .map(|c| (c.corrected_pseudorange, c.variance))
                .unzip()
        };
        blocks.push(pseudorange_block(positions, values, &variances)?);

        let with_doppler: Vec<_> = corrected.iter().filter(|c| c.range_rate.is_some()).collect();
        if !with_doppler.is_empty() {
            blocks.push(doppler_block(
                with_doppler.iter().map(|c| c.sat_position).collect(),
                with_doppler.iter().map(|c| c.sat_velocity).collect(),
                with_doppler.iter().filter_map(|c| c.range_rate).collect(),
                self.config.doppler_variance,
            )?);
        }
        Ok(blocks)
    }

    fn constrained_update(
        &self,
        prior: &StateEstimate,
        blocks: &mut Vec<MeasurementBlock>,
        map: &TrackMap,
    ) -> Result<(StateEstimate, UpdateDiagnostics, bool)> {
        let cfg = &self.config.constraint;
        let gnss_count = blocks.len();
        let mut anchor = prior.position();
        let rounds = if cfg.reproject_each_iteration {
            self.config.iekf.max_iterations
        } else {
            1
        };

        let mut result = None;
        for _ in 0..rounds {
            blocks.truncate(gnss_count);
            let constraint = constraint_from_point(&anchor, map, cfg);
            let active = constraint.is_some();
            if let Some(block) = constraint {
                blocks.push(block);
            } else {
                log::debug!("soft constraint inactive: no track within {} m", cfg.search_radius);
            }
            if blocks.is_empty() {
                return Ok((prior.clone(), UpdateDiagnostics::default(), false));
            }
            let (post, diag) = iekf_update(prior, blocks, &self.config.iekf)?;
            let moved = (post.position() - anchor).norm();
            anchor = post.position();
            result = Some((post, diag, active));
            if !active || moved < self.config.iekf.epsilon {
                break;
            }
        }
        Ok(result.expect("at least one round"))
    }
}

/// Runs the filter over all epochs, tagging failures with the epoch index.
pub fn run_filter(
    epochs: &[EpochRecord],
    initial: StateEstimate,
    config: &FilterConfig,
    features: Features,
    map: Option<&TrackMap>,
) -> Result<Vec<EpochSolution>> {
    let mut filter = NavigationFilter::new(initial, config, features, map)?;
    epochs
        .iter()
        .enumerate()
        .map(|(k, epoch)| filter.step(epoch).map_err(|e| e.at_epoch(k)))
        .collect()
}
