//! Server-side screening policies plugged into the round loop.

use rayon::prelude::*;

use crate::autoencoder::{self, AeConfig};
use crate::baselines;
use crate::cam::{self, CamKind, HeatMap, ProbeImage};
use crate::config::{DefenseKind, ExperimentConfig};
use crate::error::Result;
use crate::fl::{DefenseHook, NoDefense, Screening};
use crate::linalg;
use crate::nn::{ClassifierArch, ModelParams};
use crate::seeding::{self, Stream};
use crate::voting::{self, VoteBuffer};

/// Renders every upload on the probe image.
pub fn render_maps(
    kind: CamKind,
    arch: &ClassifierArch,
    uploads: &[ModelParams],
    probe: &ProbeImage,
    round: usize,
) -> Result<Vec<HeatMap>> {
    uploads
        .par_iter()
        .enumerate()
        .map(|(l, params)| {
            let mut map = cam::cam_map(kind, arch, params, probe)?;
            map.client = l;
            map.round = round;
            Ok(map)
        })
        .collect()
}

/// Heat map → autoencoder → threshold → block vote.
pub struct CamAeDefense<'a> {
    kind: CamKind,
    arch: &'a ClassifierArch,
    probe: ProbeImage,
    ae: AeConfig,
    alpha: f64,
    votes: Option<VoteBuffer>,
    seed: u64,
    maps: Vec<HeatMap>,
}

impl<'a> CamAeDefense<'a> {
    /// `voting = None` uses the instantaneous verdicts every round.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: CamKind,
        arch: &'a ClassifierArch,
        probe: ProbeImage,
        ae: AeConfig,
        alpha: f64,
        voting: Option<(usize, usize)>,
        clients: usize,
        seed: u64,
    ) -> Result<Self> {
        let votes = voting
            .map(|(xi, eps)| VoteBuffer::new(xi, eps, clients))
            .transpose()?;
        Ok(Self {
            kind,
            arch,
            probe,
            ae,
            alpha,
            votes,
            seed,
            maps: Vec::new(),
        })
    }
}

impl DefenseHook for CamAeDefense<'_> {
    fn screen(
        &mut self,
        round: usize,
        _global: &ModelParams,
        uploads: &[ModelParams],
        _claimed: &[f64],
    ) -> Result<Screening> {
        self.maps = render_maps(self.kind, self.arch, uploads, &self.probe, round)?;
        let rows: Vec<Vec<f64>> = self
            .maps
            .iter()
            .map(|m| cam::min_max_normalize(&m.values))
            .collect();
        let ae_seed = seeding::derive(self.seed, Stream::Autoencoder, &[round as u64]);
        let (ae, _) = autoencoder::train_ae(&rows, &self.ae, ae_seed)?;
        let errors = autoencoder::score(&ae, &rows)?;
        let v = autoencoder::threshold_and_verdicts(&errors, self.alpha)?;

        let (include, vote) = match &mut self.votes {
            Some(buf) => {
                buf.push_verdicts(&v.benign, round)?;
                let decision = if round.is_multiple_of(buf.xi()) {
                    Some(buf.decide()?)
                } else {
                    None
                };
                let mask = voting::include_mask(&v.benign, decision.as_deref(), round, buf.xi());
                (mask, decision)
            }
            None => (v.benign.clone(), None),
        };
        Ok(Screening {
            flagged: include.iter().map(|i| !i).collect(),
            include,
            scores: Some(errors.clone()),
            errors: Some(errors),
            mean_error: Some(v.mean),
            threshold: Some(v.threshold),
            verdicts: Some(v.benign),
            vote,
            aggregate: None,
        })
    }

    fn name(&self) -> &'static str {
        match self.kind {
            CamKind::LayerCam => "layercam_ae",
            CamKind::GradCam => "gradcam_ae",
        }
    }

    fn heat_maps(&self) -> &[HeatMap] {
        &self.maps
    }
}

/// Krum on flattened heat maps; only the winner is aggregated.
pub struct LayerCamKrum<'a> {
    arch: &'a ClassifierArch,
    probe: ProbeImage,
    f: usize,
    maps: Vec<HeatMap>,
}

impl<'a> LayerCamKrum<'a> {
    pub fn new(arch: &'a ClassifierArch, probe: ProbeImage, f: usize) -> Self {
        Self {
            arch,
            probe,
            f,
            maps: Vec::new(),
        }
    }
}

impl DefenseHook for LayerCamKrum<'_> {
    fn screen(
        &mut self,
        round: usize,
        _global: &ModelParams,
        uploads: &[ModelParams],
        _claimed: &[f64],
    ) -> Result<Screening> {
        self.maps = render_maps(CamKind::LayerCam, self.arch, uploads, &self.probe, round)?;
        let rows: Vec<Vec<f64>> = self
            .maps
            .iter()
            .map(|m| cam::min_max_normalize(&m.values))
            .collect();
        let v = baselines::layercam_krum(&rows, self.f)?;
        Ok(Screening {
            include: v.include,
            flagged: v.flagged,
            scores: Some(v.scores),
            ..Screening::default()
        })
    }

    fn name(&self) -> &'static str {
        "layercam_krum"
    }

    fn heat_maps(&self) -> &[HeatMap] {
        &self.maps
    }
}

fn param_rows(uploads: &[ModelParams]) -> Vec<&[f64]> {
    uploads.iter().map(ModelParams::values).collect()
}

pub struct MultiKrum {
    pub f: usize,
    pub m: usize,
}

impl DefenseHook for MultiKrum {
    fn screen(
        &mut self,
        _round: usize,
        _global: &ModelParams,
        uploads: &[ModelParams],
        _claimed: &[f64],
    ) -> Result<Screening> {
        let v = baselines::multi_krum(&param_rows(uploads), self.f, self.m)?;
        Ok(Screening {
            include: v.include,
            flagged: v.flagged,
            scores: Some(v.scores),
            ..Screening::default()
        })
    }

    fn name(&self) -> &'static str {
        "multi_krum"
    }
}

/// Coordinate-wise trimmed mean; flags nobody.
pub struct TrimmedMean {
    pub k: usize,
}

impl DefenseHook for TrimmedMean {
    fn screen(
        &mut self,
        _round: usize,
        _global: &ModelParams,
        uploads: &[ModelParams],
        _claimed: &[f64],
    ) -> Result<Screening> {
        let robust = baselines::trimmed_mean(uploads, self.k)?;
        Ok(Screening {
            aggregate: Some(robust),
            ..Screening::include_all(uploads.len())
        })
    }

    fn name(&self) -> &'static str {
        "trimmed_mean"
    }
}

/// 2-means filter; `threshold = None` uses the round's mean pairwise
/// upload distance.
pub struct Auror {
    pub threshold: Option<f64>,
}

impl DefenseHook for Auror {
    fn screen(
        &mut self,
        _round: usize,
        _global: &ModelParams,
        uploads: &[ModelParams],
        _claimed: &[f64],
    ) -> Result<Screening> {
        let rows = param_rows(uploads);
        let threshold = match self.threshold {
            Some(t) => t,
            None => linalg::mean_pairwise_distance(&rows),
        };
        let v = baselines::auror_kmeans(&rows, threshold)?;
        Ok(Screening {
            include: v.include,
            flagged: v.flagged,
            scores: Some(v.scores),
            threshold: Some(threshold),
            ..Screening::default()
        })
    }

    fn name(&self) -> &'static str {
        "auror"
    }
}

/// Builds the defense a config asks for.
pub fn build<'a>(
    cfg: &ExperimentConfig,
    arch: &'a ClassifierArch,
    probe: &ProbeImage,
) -> Result<Box<dyn DefenseHook + 'a>> {
    let clients = cfg.num_clients();
    let voting = cfg
        .voting
        .enabled
        .then_some((cfg.voting.xi, cfg.voting.epsilon));
    let ae = AeConfig {
        hidden: cfg.detector.hidden,
        epochs: cfg.detector.epochs,
        lr: cfg.detector.lr,
        weight_decay: cfg.detector.weight_decay,
        activation: cfg.detector.activation,
    };
    let cam_ae = |kind| -> Result<Box<dyn DefenseHook + 'a>> {
        Ok(Box::new(CamAeDefense::new(
            kind,
            arch,
            probe.clone(),
            ae,
            cfg.detector.alpha,
            voting,
            clients,
            cfg.seed,
        )?))
    };
    Ok(match cfg.defense.method {
        DefenseKind::LayercamAe => cam_ae(CamKind::LayerCam)?,
        DefenseKind::GradcamAe => cam_ae(CamKind::GradCam)?,
        DefenseKind::LayercamKrum => Box::new(LayerCamKrum::new(arch, probe.clone(), cfg.krum_f())),
        DefenseKind::MultiKrum => Box::new(MultiKrum {
            f: cfg.krum_f(),
            m: cfg.krum_m(),
        }),
        DefenseKind::TrimmedMean => Box::new(TrimmedMean { k: cfg.trim_k() }),
        DefenseKind::Auror => Box::new(Auror {
            threshold: cfg.defense.auror_threshold,
        }),
        DefenseKind::None => Box::new(NoDefense),
    })
}
