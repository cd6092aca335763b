//! Acoustic propagation from the beacon array to the receiver.
//!
//! Channels are sparse tap lists. Rendering convolves each channel's slot
//! emission with its taps on the receiver sample grid, sums the channels and
//! adds white Gaussian noise.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::TransmitFrame;

pub type Point3 = Vector3<f64>;

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_REFERENCE_GAIN: f64 = 1.0;

/// Side of the square beacon structure, metres.
pub const ARRAY_SIDE: f64 = 0.7;
pub const UEX_ROOM_DIMENSIONS: [f64; 3] = [6.4, 3.5, 2.8];
pub const UEX_REFLECTION_COEFF: f64 = 0.9;
/// Beacon plane height, 0.1 m below the ceiling.
pub const UEX_ARRAY_HEIGHT: f64 = 2.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeaconArray {
    pub positions: Vec<Point3>,
}

impl BeaconArray {
    pub fn new(positions: Vec<Point3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("beacon array is empty".into()));
        }
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if (positions[i] - positions[j]).norm() < 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "beacons {} and {} coincide",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { positions })
    }

    /// Four corners of a `side`×`side` square plus its centre, horizontal at
    /// height `z` and centred on (0, 0). Corners are beacons 1..4
    /// counter-clockwise from (−, −); the centre is beacon 5.
    pub fn square_with_centre(side: f64, z: f64) -> Self {
        let h = side / 2.0;
        Self {
            positions: vec![
                Point3::new(-h, -h, z),
                Point3::new(h, -h, z),
                Point3::new(h, h, z),
                Point3::new(-h, h, z),
                Point3::new(0.0, 0.0, z),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        self.positions.iter().sum::<Point3>() / self.positions.len() as f64
    }
}

/// Axis-aligned box room. Surfaces are ordered x−, x+, y−, y+, floor, ceiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomModel {
    pub min_corner: Point3,
    pub dimensions: [f64; 3],
    pub reflection_coeffs: [f64; 6],
}

impl RoomModel {
    pub fn new(min_corner: Point3, dimensions: [f64; 3], reflection_coeffs: [f64; 6]) -> Result<Self> {
        let room = Self {
            min_corner,
            dimensions,
            reflection_coeffs,
        };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Room(format!(
                "dimensions {:?} must be positive",
                self.dimensions
            )));
        }
        if self.reflection_coeffs.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Room(format!(
                "reflection coefficients {:?} must lie in [0, 1]",
                self.reflection_coeffs
            )));
        }
        Ok(())
    }

    /// The 6.4 × 3.5 × 2.8 m box with all coefficients 0.9, translated so
    /// that (0, 0) is the ceiling centre and the floor is z = 0.
    pub fn uex() -> Self {
        let [lx, ly, _] = UEX_ROOM_DIMENSIONS;
        Self {
            min_corner: Point3::new(-lx / 2.0, -ly / 2.0, 0.0),
            dimensions: UEX_ROOM_DIMENSIONS,
            reflection_coeffs: [UEX_REFLECTION_COEFF; 6],
        }
    }

    pub fn max_corner(&self) -> Point3 {
        self.min_corner + Point3::from(self.dimensions)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let hi = self.max_corner();
        (0..3).all(|k| p[k] >= self.min_corner[k] && p[k] <= hi[k])
    }

    /// Mirror image of `p` across surface `s`.
    fn image(&self, p: &Point3, s: usize) -> Point3 {
        let axis = s / 2;
        let plane = if s.is_multiple_of(2) {
            self.min_corner[axis]
        } else {
            self.max_corner()[axis]
        };
        let mut q = *p;
        q[axis] = 2.0 * plane - p[axis];
        q
    }
}

/// The LoS array geometry used by the bundled scenarios.
pub fn uex_array() -> BeaconArray {
    BeaconArray::square_with_centre(ARRAY_SIDE, UEX_ARRAY_HEIGHT)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipathTap {
    pub delay_s: f64,
    pub gain: f64,
}

/// Per-channel tap lists, channel `i` at index `i − 1`, taps sorted by delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRealization {
    pub channels: Vec<Vec<MultipathTap>>,
    pub speed_of_sound: f64,
}

impl ChannelRealization {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Earliest tap of a channel.
    pub fn los(&self, channel_index: usize) -> Option<&MultipathTap> {
        self.channels.get(channel_index).and_then(|c| c.first())
    }

    fn sort(&mut self) {
        for taps in &mut self.channels {
            taps.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("taps serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut ch: Self = serde_json::from_str(s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        ch.sort();
        Ok(ch)
    }
}

fn spreading_tap(distance: f64, c: f64, reference_gain: f64, coeff: f64) -> MultipathTap {
    MultipathTap {
        delay_s: distance / c,
        gain: coeff * reference_gain / distance,
    }
}

/// One line-of-sight tap per beacon with 1/d spreading.
pub fn direct_path_taps(
    array: &BeaconArray,
    receiver: &Point3,
    c: f64,
    reference_gain: f64,
) -> Result<ChannelRealization> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("speed of sound must be positive".into()));
    }
    let channels = array
        .positions
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let d = (b - receiver).norm();
            if d < 1e-9 {
                Err(Error::ZeroDistance(i + 1))
            } else {
                Ok(vec![spreading_tap(d, c, reference_gain, 1.0)])
            }
        })
        .collect::<Result<_>>()?;
    Ok(ChannelRealization {
        channels,
        speed_of_sound: c,
    })
}

/// Direct path plus, for `order = 1`, one reflection per room surface.
pub fn image_source_taps(
    room: &RoomModel,
    array: &BeaconArray,
    receiver: &Point3,
    c: f64,
    reference_gain: f64,
    order: u32,
) -> Result<ChannelRealization> {
    if order > 1 {
        return Err(Error::ImageOrder(order));
    }
    room.validate()?;
    for p in array.positions.iter().chain(std::iter::once(receiver)) {
        if !room.contains(p) {
            return Err(Error::OutsideRoom([p.x, p.y, p.z]));
        }
    }
    let mut ch = direct_path_taps(array, receiver, c, reference_gain)?;
    if order == 1 {
        for (taps, beacon) in ch.channels.iter_mut().zip(&array.positions) {
            for s in 0..6 {
                let d = (room.image(beacon, s) - receiver).norm();
                taps.push(spreading_tap(d, c, reference_gain, room.reflection_coeffs[s]));
            }
        }
        ch.sort();
    }
    Ok(ch)
}

/// Appends an echo at `LoS delay + extra_delay_s` with `gain_ratio × LoS gain`
/// to every channel.
pub fn add_reflector_echo(ch: &ChannelRealization, extra_delay_s: f64, gain_ratio: f64) -> Result<ChannelRealization> {
    let all: Vec<usize> = (1..=ch.num_channels()).collect();
    add_reflector_echo_to(ch, extra_delay_s, gain_ratio, &all)
}

/// As [`add_reflector_echo`], restricted to the listed 1-based channels.
pub fn add_reflector_echo_to(
    ch: &ChannelRealization,
    extra_delay_s: f64,
    gain_ratio: f64,
    channels: &[usize],
) -> Result<ChannelRealization> {
    if !(extra_delay_s > 0.0) {
        return Err(Error::InvalidArgument("echo delay must be positive".into()));
    }
    let mut out = ch.clone();
    for &c in channels {
        let taps = out
            .channels
            .get_mut(c.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidArgument(format!("no channel {c}")))?;
        let los = *taps.first().ok_or(Error::EmptyChannel(c))?;
        taps.push(MultipathTap {
            delay_s: los.delay_s + extra_delay_s,
            gain: gain_ratio * los.gain,
        });
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseConfig {
    Noiseless,
    /// Referenced to the strongest channel's LoS component over its pattern.
    SnrDb(f64),
    Sigma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedBuffer {
    pub samples: Vec<f64>,
    pub rate_hz: f64,
    pub capture_offset_s: f64,
}

impl ReceivedBuffer {
    pub fn new(samples: Vec<f64>, rate_hz: f64) -> Self {
        Self {
            samples,
            rate_hz,
            capture_offset_s: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub fs_rx: f64,
    /// Samples recorded before slot 0 begins.
    pub capture_offset_samples: usize,
    /// Fixed buffer length; `None` renders the shortest buffer that holds
    /// every tap.
    pub buffer_len: Option<usize>,
}

impl RenderOptions {
    pub fn new(fs_rx: f64) -> Self {
        Self {
            fs_rx,
            capture_offset_samples: 0,
            buffer_len: None,
        }
    }
}

/// Tap delay on the receiver grid, nearest sample.
pub fn delay_samples(delay_s: f64, fs: f64) -> usize {
    (delay_s * fs).round() as usize
}

/// First and one-past-last nonzero sample.
fn support(stream: &[f64]) -> Option<(usize, usize)> {
    let first = stream.iter().position(|&x| x != 0.0)?;
    let last = stream.iter().rposition(|&x| x != 0.0)?;
    Some((first, last + 1))
}

/// Renders `r = Σ S^i h^i + n` on the receiver grid. Frames above `fs_rx`
/// are decimated first; callers rendering many buffers should convert the
/// frame once with [`TransmitFrame::at_rate`].
pub fn render_received(
    frame: &TransmitFrame,
    ch: &ChannelRealization,
    noise: &NoiseConfig,
    opts: &RenderOptions,
    seed: u64,
) -> Result<ReceivedBuffer> {
    let frame = frame.at_rate(opts.fs_rx)?;
    if frame.num_channels() != ch.num_channels() {
        return Err(Error::ChannelCountMismatch {
            patterns: frame.num_channels(),
            channels: ch.num_channels(),
        });
    }
    let fs = frame.rate_hz;
    let offset = opts.capture_offset_samples;

    let supports: Vec<Option<(usize, usize)>> = frame.streams.iter().map(|s| support(s)).collect();
    let mut max_delay = 0;
    for t in ch.channels.iter().flatten() {
        if !(t.delay_s >= 0.0) {
            return Err(Error::InvalidArgument("negative tap delay".into()));
        }
        max_delay = max_delay.max(delay_samples(t.delay_s, fs));
    }
    let required = offset + frame.len() + max_delay;
    let len = opts.buffer_len.unwrap_or(required);
    if len < required {
        return Err(Error::BufferTooShort { required, actual: len });
    }

    let mut samples = vec![0.0; len];
    for ((stream, sup), taps) in frame.streams.iter().zip(&supports).zip(&ch.channels) {
        let Some((lo, hi)) = *sup else { continue };
        for t in taps {
            if t.gain == 0.0 {
                continue;
            }
            let shift = offset + delay_samples(t.delay_s, fs);
            for (out, x) in samples[lo + shift..hi + shift].iter_mut().zip(&stream[lo..hi]) {
                *out += t.gain * x;
            }
        }
    }

    let sigma = match *noise {
        NoiseConfig::Noiseless => 0.0,
        NoiseConfig::Sigma(s) => s,
        NoiseConfig::SnrDb(snr) => {
            let mut power = 0.0f64;
            for ((stream, sup), taps) in frame.streams.iter().zip(&supports).zip(&ch.channels) {
                if let (Some((lo, hi)), Some(los)) = (sup, taps.first()) {
                    let ms = stream[*lo..*hi].iter().map(|x| x * x).sum::<f64>() / (hi - lo) as f64;
                    power = power.max(los.gain * los.gain * ms);
                }
            }
            (power / 10f64.powf(snr / 10.0)).sqrt()
        }
    };
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma {sigma} invalid")));
    }
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for x in &mut samples {
            *x += normal.sample(&mut rng);
        }
    }

    Ok(ReceivedBuffer {
        samples,
        rate_hz: fs,
        capture_offset_s: offset as f64 / fs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn direct_delay_and_gain() {
        let array = BeaconArray::new(vec![Point3::new(0.0, 0.0, 3.5), Point3::new(0.0, 0.0, 6.0)]).unwrap();
        let ch = direct_path_taps(&array, &Point3::new(0.0, 0.0, 1.0), 343.0, 1.0).unwrap();
        assert_relative_eq!(ch.channels[0][0].delay_s, 2.5 / 343.0, max_relative = 1e-12);
        assert_relative_eq!(ch.channels[0][0].delay_s * 1e3, 7.289, epsilon = 1e-3);
        assert_relative_eq!(
            ch.channels[1][0].gain * 2.0,
            ch.channels[0][0].gain,
            max_relative = 1e-12
        );
    }

    #[test]
    fn coincident_receiver() {
        let array = uex_array();
        let at = array.positions[2];
        assert_eq!(direct_path_taps(&array, &at, 343.0, 1.0), Err(Error::ZeroDistance(3)));
    }

    #[test]
    fn image_sources() {
        let room = RoomModel::uex();
        let array = uex_array();
        let rx = Point3::new(0.0, 0.0, 1.0);
        let direct = direct_path_taps(&array, &rx, 343.0, 1.0).unwrap();
        assert_eq!(image_source_taps(&room, &array, &rx, 343.0, 1.0, 0).unwrap(), direct);
        let first = image_source_taps(&room, &array, &rx, 343.0, 1.0, 1).unwrap();
        for (taps, d) in first.channels.iter().zip(&direct.channels) {
            assert_eq!(taps.len(), 7);
            assert_eq!(taps[0], d[0]);
            assert!(taps.windows(2).all(|w| w[0].delay_s <= w[1].delay_s));
        }
        // Floor image of the centre beacon: path 2.7 + 1.0.
        let centre = &first.channels[4];
        assert!(centre
            .iter()
            .any(|t| (t.delay_s - 3.7 / 343.0).abs() < 1e-12 && (t.gain - 0.9 / 3.7).abs() < 1e-12));

        let mut dead = room.clone();
        dead.reflection_coeffs = [0.0; 6];
        let absorbed = image_source_taps(&dead, &array, &rx, 343.0, 1.0, 1).unwrap();
        for taps in &absorbed.channels {
            assert_eq!(taps.iter().filter(|t| t.gain == 0.0).count(), 6);
        }
        assert_eq!(
            image_source_taps(&room, &array, &rx, 343.0, 1.0, 2),
            Err(Error::ImageOrder(2))
        );
        assert!(matches!(
            image_source_taps(&room, &array, &Point3::new(9.0, 0.0, 1.0), 343.0, 1.0, 1),
            Err(Error::OutsideRoom(_))
        ));
    }

    #[test]
    fn reflector_echo() {
        let array = uex_array();
        let ch = direct_path_taps(&array, &Point3::new(0.0, 0.0, 1.0), 343.0, 1.0).unwrap();
        let e = add_reflector_echo(&ch, 0.8e-3, 1.5).unwrap();
        for (taps, d) in e.channels.iter().zip(&ch.channels) {
            assert_eq!(taps.len(), 2);
            assert_relative_eq!(taps[1].gain, 1.5 * d[0].gain);
            let lag = delay_samples(taps[1].delay_s, 1e5) - delay_samples(taps[0].delay_s, 1e5);
            assert_eq!(lag, 80);
        }
        let z = add_reflector_echo(&ch, 0.8e-3, 0.0).unwrap();
        assert!(z.channels.iter().all(|t| t[1].gain == 0.0));
        let twice = add_reflector_echo(&e, 0.3e-3, 0.5).unwrap();
        assert!(twice.channels.iter().all(|t| t.len() == 3));
        assert!(add_reflector_echo(&ch, 0.0, 1.0).is_err());
        let empty = ChannelRealization {
            channels: vec![vec![]],
            speed_of_sound: 343.0,
        };
        assert_eq!(add_reflector_echo(&empty, 1e-3, 1.0), Err(Error::EmptyChannel(1)));
        let some = add_reflector_echo_to(&ch, 0.8e-3, 1.5, &[3]).unwrap();
        assert_eq!(
            some.channels.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![1, 1, 2, 1, 1]
        );
    }

    #[test]
    fn json_roundtrip() {
        let ch = image_source_taps(
            &RoomModel::uex(),
            &uex_array(),
            &Point3::new(0.3, 0.2, 1.0),
            343.0,
            1.0,
            1,
        )
        .unwrap();
        assert_eq!(ChannelRealization::from_json(&ch.to_json()).unwrap(), ch);
    }

    fn impulse_frame(len: usize) -> TransmitFrame {
        let mut s = vec![0.0; len];
        s[0] = 1.0;
        s[1] = -0.5;
        TransmitFrame {
            rate_hz: 1e5,
            slot_samples: len,
            streams: vec![s],
        }
    }

    #[test]
    fn shifted_scaled_copy() {
        let frame = impulse_frame(100);
        let ch = ChannelRealization {
            channels: vec![vec![MultipathTap {
                delay_s: 37e-5,
                gain: 2.0,
            }]],
            speed_of_sound: 343.0,
        };
        let b = render_received(&frame, &ch, &NoiseConfig::Noiseless, &RenderOptions::new(1e5), 0).unwrap();
        assert_eq!(b.len(), 137);
        assert_eq!(b.samples[37], 2.0);
        assert_eq!(b.samples[38], -1.0);
        assert_eq!(b.samples.iter().filter(|&&x| x != 0.0).count(), 2);

        let mut opts = RenderOptions::new(1e5);
        opts.buffer_len = Some(120);
        assert_eq!(
            render_received(&frame, &ch, &NoiseConfig::Noiseless, &opts, 0),
            Err(Error::BufferTooShort {
                required: 137,
                actual: 120
            })
        );
    }

    #[test]
    fn noise_only_variance() {
        let frame = impulse_frame(10_000);
        let ch = ChannelRealization {
            channels: vec![vec![MultipathTap {
                delay_s: 0.0,
                gain: 0.0,
            }]],
            speed_of_sound: 343.0,
        };
        let b = render_received(&frame, &ch, &NoiseConfig::Sigma(0.3), &RenderOptions::new(1e5), 11).unwrap();
        let n = b.len() as f64;
        let mean = b.samples.iter().sum::<f64>() / n;
        let var = b.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() / 0.3 - 1.0).abs() < 0.05, "sigma {}", var.sqrt());
        let again = render_received(&frame, &ch, &NoiseConfig::Sigma(0.3), &RenderOptions::new(1e5), 11).unwrap();
        assert_eq!(b, again);
    }
}
