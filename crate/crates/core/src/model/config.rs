use crate::error::{Error, Result};
use crate::kv;
use crate::meca::MecaSpec;
use crate::nn::ConvMode;

/// Spatial stride of the deepest skip tap; input sides must be multiples.
pub const SIZE_MULTIPLE: usize = 16;
/// Total downsampling of the encoder.
pub const ENCODER_STRIDE: usize = 32;
pub const DECODER_STAGES: usize = 5;
pub const SKIP_COUNT: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Paper,
    Desk,
}

impl Scale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper" => Some(Scale::Paper),
            "desk" => Some(Scale::Desk),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MecaKernel {
    Adaptive,
    Fixed(usize),
}

impl MecaKernel {
    pub fn spec(self, channels: usize) -> Result<MecaSpec> {
        match self {
            MecaKernel::Adaptive => Ok(MecaSpec::adaptive(channels)),
            MecaKernel::Fixed(k) => MecaSpec::new(channels, k),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub stem_channels: usize,
    /// Layers per dense block; exactly four blocks.
    pub blocks: Vec<usize>,
    pub growth_rate: usize,
    pub bottleneck_factor: usize,
    pub compression: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_size: (usize, usize),
    pub conv_mode: ConvMode,
    pub use_aspp: bool,
    pub use_meca: bool,
    pub encoder: EncoderConfig,
    /// Width of the convolution block after the last dense block.
    pub tail_channels: usize,
    pub aspp_channels: usize,
    pub aspp_rates: Vec<usize>,
    pub aspp_1x1: bool,
    pub aspp_image_pool: bool,
    pub meca_kernel: MecaKernel,
    pub decoder_widths: Vec<usize>,
    pub seed: u64,
}

/// The five ablation rows, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    StConv,
    SeConv,
    SeConvAspp,
    SeConvMeca,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::StConv,
        Variant::SeConv,
        Variant::SeConvAspp,
        Variant::SeConvMeca,
        Variant::Full,
    ];

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "stConv" => Some(Variant::StConv),
            "seConv" => Some(Variant::SeConv),
            "seConv+ASPP" => Some(Variant::SeConvAspp),
            "seConv+MECA" => Some(Variant::SeConvMeca),
            "full" => Some(Variant::Full),
            _ => None,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Variant::StConv => "stConv",
            Variant::SeConv => "seConv",
            Variant::SeConvAspp => "seConv+ASPP",
            Variant::SeConvMeca => "seConv+MECA",
            Variant::Full => "full",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::StConv => "DenseNet121 + stConv",
            Variant::SeConv => "DenseNet121 + seConv",
            Variant::SeConvAspp => "DenseNet121 + seConv + ASPP",
            Variant::SeConvMeca => "DenseNet121 + seConv + MECA",
            Variant::Full => "CASCN",
        }
    }

    pub fn flags(self) -> (ConvMode, bool, bool) {
        match self {
            Variant::StConv => (ConvMode::Standard, false, false),
            Variant::SeConv => (ConvMode::Separable, false, false),
            Variant::SeConvAspp => (ConvMode::Separable, true, false),
            Variant::SeConvMeca => (ConvMode::Separable, false, true),
            Variant::Full => (ConvMode::Separable, true, true),
        }
    }
}

/// `config` with exactly the flags of the named ablation row.
pub fn variant(config: &ModelConfig, name: &str) -> Result<ModelConfig> {
    let v = Variant::parse(name).ok_or_else(|| Error::config("variant", format!("unknown variant {name:?}")))?;
    Ok(config.with_variant(v))
}

impl ModelConfig {
    /// DenseNet-121 encoder at 192×256.
    pub fn paper() -> Self {
        Self {
            input_size: (192, 256),
            conv_mode: ConvMode::Separable,
            use_aspp: true,
            use_meca: true,
            encoder: EncoderConfig {
                stem_channels: 64,
                blocks: vec![6, 12, 24, 16],
                growth_rate: 32,
                bottleneck_factor: 4,
                compression: 0.5,
            },
            tail_channels: 512,
            aspp_channels: 256,
            aspp_rates: vec![6, 12, 18],
            aspp_1x1: true,
            aspp_image_pool: true,
            meca_kernel: MecaKernel::Adaptive,
            decoder_widths: vec![512, 256, 128, 64, 32],
            seed: 0,
        }
    }

    /// Same topology, scaled down for CPU tests.
    pub fn desk() -> Self {
        Self {
            input_size: (48, 64),
            encoder: EncoderConfig {
                stem_channels: 16,
                blocks: vec![2, 2, 2, 2],
                growth_rate: 8,
                bottleneck_factor: 4,
                compression: 0.5,
            },
            tail_channels: 32,
            aspp_channels: 32,
            decoder_widths: vec![64, 48, 32, 24, 16],
            ..Self::paper()
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Paper => Self::paper(),
            Scale::Desk => Self::desk(),
        }
    }

    pub fn with_variant(&self, v: Variant) -> Self {
        let (conv_mode, use_aspp, use_meca) = v.flags();
        Self {
            conv_mode,
            use_aspp,
            use_meca,
            ..self.clone()
        }
    }

    /// Matching ablation row, if the flags form one.
    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.flags() == (self.conv_mode, self.use_aspp, self.use_meca))
    }

    /// Spatial size the encoder runs at: the input rounded up to a whole
    /// number of encoder strides.
    pub fn padded_size(&self) -> (usize, usize) {
        let up = |v: usize| v.div_ceil(ENCODER_STRIDE) * ENCODER_STRIDE;
        (up(self.input_size.0), up(self.input_size.1))
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(Error::config(
                "input_size",
                format!("{h}x{w}: height and width must be positive multiples of {SIZE_MULTIPLE}"),
            ));
        }
        let e = &self.encoder;
        if e.blocks.len() != SKIP_COUNT {
            return Err(Error::config("blocks", format!("expected {SKIP_COUNT} dense blocks, got {}", e.blocks.len())));
        }
        for (key, v) in [
            ("stem_channels", e.stem_channels),
            ("growth_rate", e.growth_rate),
            ("bottleneck_factor", e.bottleneck_factor),
            ("tail_channels", self.tail_channels),
            ("aspp_channels", self.aspp_channels),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(e.compression > 0.0 && e.compression <= 1.0) {
            return Err(Error::config("compression", format!("{} is outside (0, 1]", e.compression)));
        }
        for c in self.encoder_channels().skips {
            if c == 0 {
                return Err(Error::config("compression", "compresses a stage to zero channels"));
            }
        }
        if self.decoder_widths.len() != DECODER_STAGES {
            return Err(Error::config(
                "decoder_widths",
                format!("expected {DECODER_STAGES} widths, got {}", self.decoder_widths.len()),
            ));
        }
        if self.decoder_widths.contains(&0) {
            return Err(Error::config("decoder_widths", "widths must be positive"));
        }
        if let MecaKernel::Fixed(k) = self.meca_kernel {
            if k % 2 == 0 {
                return Err(Error::config("meca_kernel", format!("{k} is not odd")));
            }
        }
        if self.use_aspp {
            self.aspp_spec().validate()?;
        }
        Ok(())
    }

    pub fn aspp_spec(&self) -> crate::aspp::AsppSpec {
        crate::aspp::AsppSpec {
            in_channels: self.tail_channels,
            out_channels: self.aspp_channels,
            rates: self.aspp_rates.clone(),
            include_1x1: self.aspp_1x1,
            include_image_pool: self.aspp_image_pool,
        }
    }

    /// Channel counts along the encoder, derived from the schedule alone.
    pub fn encoder_channels(&self) -> EncoderChannels {
        let e = &self.encoder;
        let mut skips = vec![e.stem_channels];
        let mut stages = Vec::new();
        let mut c = e.stem_channels;
        for (i, &layers) in e.blocks.iter().enumerate() {
            c += layers * e.growth_rate;
            stages.push(c);
            if i + 1 < e.blocks.len() {
                skips.push(c);
                c = ((c as f64) * e.compression).floor() as usize;
                stages.push(c);
            }
        }
        EncoderChannels {
            skips,
            stages,
            bottom: c,
        }
    }

    pub fn meca_spec(&self, channels: usize) -> Result<MecaSpec> {
        self.meca_kernel.spec(channels)
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let e = &self.encoder;
        let pairs: Vec<(&str, String)> = vec![
            ("input_size", format!("{}x{}", self.input_size.0, self.input_size.1)),
            ("conv_mode", self.conv_mode.as_str().to_string()),
            ("use_aspp", self.use_aspp.to_string()),
            ("use_meca", self.use_meca.to_string()),
            ("stem_channels", e.stem_channels.to_string()),
            ("blocks", kv::list(&e.blocks)),
            ("growth_rate", e.growth_rate.to_string()),
            ("bottleneck_factor", e.bottleneck_factor.to_string()),
            ("compression", kv::float(e.compression)),
            ("tail_channels", self.tail_channels.to_string()),
            ("aspp_channels", self.aspp_channels.to_string()),
            ("aspp_rates", kv::list(&self.aspp_rates)),
            ("aspp_1x1", self.aspp_1x1.to_string()),
            ("aspp_image_pool", self.aspp_image_pool.to_string()),
            (
                "meca_kernel",
                match self.meca_kernel {
                    MecaKernel::Adaptive => "adaptive".to_string(),
                    MecaKernel::Fixed(k) => k.to_string(),
                },
            ),
            ("decoder_widths", kv::list(&self.decoder_widths)),
            ("seed", self.seed.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Applies one pair; `Ok(false)` when the key is not a model key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        let e = &mut self.encoder;
        match key {
            "input_size" => self.input_size = kv::parse_size(key, v)?,
            "conv_mode" => {
                self.conv_mode = ConvMode::parse(v)
                    .ok_or_else(|| Error::config(key, format!("expected standard or separable, got {v:?}")))?
            }
            "use_aspp" => self.use_aspp = kv::parse_bool(key, v)?,
            "use_meca" => self.use_meca = kv::parse_bool(key, v)?,
            "variant" => {
                let var = Variant::parse(v).ok_or_else(|| Error::config(key, format!("unknown variant {v:?}")))?;
                (self.conv_mode, self.use_aspp, self.use_meca) = var.flags();
            }
            "stem_channels" => e.stem_channels = kv::parse_num(key, v)?,
            "blocks" => e.blocks = kv::parse_list(key, v)?,
            "growth_rate" => e.growth_rate = kv::parse_num(key, v)?,
            "bottleneck_factor" => e.bottleneck_factor = kv::parse_num(key, v)?,
            "compression" => e.compression = kv::parse_f64(key, v)?,
            "tail_channels" => self.tail_channels = kv::parse_num(key, v)?,
            "aspp_channels" => self.aspp_channels = kv::parse_num(key, v)?,
            "aspp_rates" => self.aspp_rates = kv::parse_list(key, v)?,
            "aspp_1x1" => self.aspp_1x1 = kv::parse_bool(key, v)?,
            "aspp_image_pool" => self.aspp_image_pool = kv::parse_bool(key, v)?,
            "meca_kernel" => {
                self.meca_kernel = if v == "adaptive" {
                    MecaKernel::Adaptive
                } else {
                    MecaKernel::Fixed(kv::parse_num(key, v)?)
                }
            }
            "decoder_widths" => self.decoder_widths = kv::parse_list(key, v)?,
            "seed" => self.seed = kv::parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Reads a complete model description; every pair must be a model key.
    pub fn from_entries(entries: &[(String, String)], base: ModelConfig) -> Result<Self> {
        let mut c = base;
        for (k, v) in entries {
            if !c.set(k, v)? {
                return Err(Error::config(k.as_str(), "unknown key"));
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Channel counts at the encoder taps and after each stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderChannels {
    /// At strides 2, 4, 8, 16.
    pub skips: Vec<usize>,
    /// After each dense block and each transition, in order.
    pub stages: Vec<usize>,
    /// After the last dense block.
    pub bottom: usize,
}

/// Stride-2 tap, then blocks 1-3 at strides 4, 8, 16.
pub fn skip_strides() -> [usize; SKIP_COUNT] {
    [2, 4, 8, 16]
}
