//! Pyramid feature extractor: a small strided convnet producing 4 feature
//! levels at strides 8/16/32/64, each projected to `d_model` channels with
//! group normalization.

use crate::diffmath::{rf, NdArray, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::init::xavier_conv;
use rand_chacha::ChaCha8Rng;

pub const NUM_LEVELS: usize = 4;
pub const LEVEL_STRIDES: [usize; NUM_LEVELS] = [8, 16, 32, 64];
const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub in_channels: usize,
    /// Channel width after each stride-2 trunk block (strides 2..32).
    pub trunk_channels: Vec<usize>,
    pub d_model: usize,
    pub gn_groups: usize,
    /// 1x1 projection convs per pyramid level.
    pub projection_convs: usize,
}

impl BackboneConfig {
    pub fn desk(input_size: usize, d_model: usize) -> Self {
        BackboneConfig {
            input_size,
            in_channels: 3,
            trunk_channels: vec![16, 32, 64, 64, 64],
            d_model,
            gn_groups: 8,
            projection_convs: 1,
        }
    }

    /// Spatial sizes of the four pyramid levels for this input size.
    pub fn level_sizes(&self) -> Vec<(usize, usize)> {
        LEVEL_STRIDES
            .iter()
            .map(|&s| {
                let side = self.input_size.div_ceil(s);
                (side, side)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl ConvBlock {
    fn init<R: Real>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cout: usize,
        cin: usize,
        k: usize,
        gn_groups: usize,
    ) -> Result<Self> {
        let groups = largest_divisor_at_most(cout, gn_groups);
        Ok(ConvBlock {
            w: store.register(format!("{name}.w"), xavier_conv(rng, cout, cin, k, k))?,
            b: store.register(format!("{name}.b"), NdArray::zeros(&[cout]))?,
            gamma: store.register(format!("{name}.gamma"), NdArray::full(&[cout], R::one()))?,
            beta: store.register(format!("{name}.beta"), NdArray::zeros(&[cout]))?,
            groups,
        })
    }

    fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        x: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let c = tape.conv2d(x, w, b, stride, pad)?;
        tape.group_norm(c, self.groups, gamma, beta, rf(GN_EPS))
    }
}

fn largest_divisor_at_most(n: usize, cap: usize) -> usize {
    (1..=cap.min(n)).rev().find(|g| n % g == 0).unwrap_or(1)
}

pub struct BackboneParams {
    cfg: BackboneConfig,
    trunk: Vec<ConvBlock>,
    projections: Vec<Vec<ConvBlock>>,
    level4: ConvBlock,
}

/// Feature levels on the tape plus their spatial shapes.
pub struct Pyramid {
    pub levels: Vec<Var>,
    pub shapes: Vec<(usize, usize)>,
}

impl BackboneParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        cfg: &BackboneConfig,
    ) -> Result<Self> {
        if cfg.trunk_channels.len() != 5 {
            return Err(Error::config(
                "trunk_channels",
                "expected 5 stride-2 blocks (strides 2..32)",
            ));
        }
        let mut trunk = Vec::new();
        let mut cin = cfg.in_channels;
        for (i, &cout) in cfg.trunk_channels.iter().enumerate() {
            trunk.push(ConvBlock::init(
                store,
                rng,
                &format!("backbone.trunk{i}"),
                cout,
                cin,
                3,
                cfg.gn_groups,
            )?);
            cin = cout;
        }
        // taps at trunk indices 2,3,4 (strides 8/16/32)
        let mut projections = Vec::new();
        for level in 0..3 {
            let tap_channels = cfg.trunk_channels[2 + level];
            let mut stack = Vec::new();
            let mut pin = tap_channels;
            for p in 0..cfg.projection_convs.max(1) {
                stack.push(ConvBlock::init(
                    store,
                    rng,
                    &format!("backbone.proj{level}.{p}"),
                    cfg.d_model,
                    pin,
                    1,
                    cfg.gn_groups,
                )?);
                pin = cfg.d_model;
            }
            projections.push(stack);
        }
        let level4 = ConvBlock::init(
            store,
            rng,
            "backbone.level4",
            cfg.d_model,
            cfg.d_model,
            3,
            cfg.gn_groups,
        )?;
        Ok(BackboneParams {
            cfg: cfg.clone(),
            trunk,
            projections,
            level4,
        })
    }

    /// Extract the 4-level pyramid from an image `[in_channels, S, S]`.
    pub fn extract_pyramid<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        image: Var,
    ) -> Result<Pyramid> {
        let s = self.cfg.input_size;
        if tape.shape(image) != [self.cfg.in_channels, s, s] {
            return Err(Error::shapes(
                tape.shape(image),
                &[self.cfg.in_channels, s, s],
            ));
        }
        let mut h = image;
        let mut taps = Vec::new();
        for (i, block) in self.trunk.iter().enumerate() {
            h = block.forward(tape, store, h, 2, 1)?;
            h = tape.relu(h);
            if i >= 2 {
                taps.push(h);
            }
        }
        let mut levels = Vec::new();
        for (level, stack) in self.projections.iter().enumerate() {
            let mut p = taps[level];
            for (pi, block) in stack.iter().enumerate() {
                if pi > 0 {
                    p = tape.relu(p);
                }
                p = block.forward(tape, store, p, 1, 0)?;
            }
            levels.push(p);
        }
        levels.push(self.level4.forward(tape, store, levels[2], 2, 1)?);
        let shapes = levels
            .iter()
            .map(|&v| (tape.shape(v)[1], tape.shape(v)[2]))
            .collect();
        Ok(Pyramid { levels, shapes })
    }
}
