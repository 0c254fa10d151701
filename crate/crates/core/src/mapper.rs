//! Translation of recognised tokens into superlimb commands.
//!
//! Three experiment schemes are supported: head motion alone (proportional
//! control), throat vibration alone (amplitude-scaled commands), and the
//! multimodal action-vector table with a servo/thruster mode switch.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head_dtw::HeadMotionClass;
use crate::nn::ScaleClass;

pub const PWM_MIN: u16 = 1100;
pub const PWM_NEUTRAL: u16 = 1500;
pub const PWM_MAX: u16 = 1900;
pub const SERVO_LIMIT_DEG: f64 = 90.0;
/// Fragments shorter than this are "short".
pub const SHORT_LIMIT_MS: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationClass {
    Short,
    Long,
}

impl DurationClass {
    pub fn from_ms(ms: f64) -> Self {
        if ms < SHORT_LIMIT_MS {
            DurationClass::Short
        } else {
            DurationClass::Long
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DurationClass::Short => "short",
            DurationClass::Long => "long",
        }
    }
}

/// A recognised intention: either a (scale, duration) pair from the throat
/// or a head motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionVector {
    pub scale: Option<ScaleClass>,
    pub duration: Option<DurationClass>,
    pub head: Option<HeadMotionClass>,
}

impl ActionVector {
    pub fn throat(scale: ScaleClass, duration: DurationClass) -> Self {
        Self {
            scale: Some(scale),
            duration: Some(duration),
            head: None,
        }
    }

    pub fn head(class: HeadMotionClass) -> Self {
        Self {
            scale: None,
            duration: None,
            head: Some(class),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.scale, self.duration, self.head) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => Ok(()),
            _ => Err(Error::Contract(format!("malformed action vector {self}"))),
        }
    }
}

impl fmt::Display for ActionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.scale.map_or("null", ScaleClass::name);
        let d = self.duration.map_or("null", DurationClass::name);
        let h = self.head.map_or("null", HeadMotionClass::name);
        write!(f, "({s},{d},{h})")
    }
}

/// Absolute actuator targets; `None` means hold the previous value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SuperlimbCommand {
    pub servo_left: Option<f64>,
    pub servo_right: Option<f64>,
    pub pwm_left: Option<u16>,
    pub pwm_right: Option<u16>,
}

impl SuperlimbCommand {
    pub fn hold() -> Self {
        Self::default()
    }

    pub fn is_hold(&self) -> bool {
        *self == Self::default()
    }

    /// Range invariants: servos within ±90°, PWM within [1100, 1900].
    pub fn in_bounds(&self) -> bool {
        let servo_ok = |s: Option<f64>| s.is_none_or(|v| v.is_finite() && v.abs() <= SERVO_LIMIT_DEG);
        let pwm_ok = |p: Option<u16>| p.is_none_or(|v| (PWM_MIN..=PWM_MAX).contains(&v));
        servo_ok(self.servo_left) && servo_ok(self.servo_right) && pwm_ok(self.pwm_left) && pwm_ok(self.pwm_right)
    }

    /// Fields of `next` override those of `self`.
    pub fn merged(&self, next: &SuperlimbCommand) -> SuperlimbCommand {
        SuperlimbCommand {
            servo_left: next.servo_left.or(self.servo_left),
            servo_right: next.servo_right.or(self.servo_right),
            pwm_left: next.pwm_left.or(self.pwm_left),
            pwm_right: next.pwm_right.or(self.pwm_right),
        }
    }
}

/// Servo angles and thruster speeds before PWM conversion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub servo: Option<(f64, f64)>,
    /// Thruster speeds, rpm.
    pub speed: Option<(f64, f64)>,
}

impl Setpoint {
    fn servo(l: f64, r: f64) -> Self {
        Self {
            servo: Some((clamp_servo(l), clamp_servo(r))),
            speed: None,
        }
    }

    fn speed(l: f64, r: f64) -> Self {
        Self {
            servo: None,
            speed: Some((l, r)),
        }
    }

    pub fn to_command(&self, max_speed: f64) -> SuperlimbCommand {
        SuperlimbCommand {
            servo_left: self.servo.map(|s| s.0),
            servo_right: self.servo.map(|s| s.1),
            pwm_left: self.speed.map(|s| pwm_from_speed(s.0, max_speed)),
            pwm_right: self.speed.map(|s| pwm_from_speed(s.1, max_speed)),
        }
    }
}

fn clamp_servo(v: f64) -> f64 {
    v.clamp(-SERVO_LIMIT_DEG, SERVO_LIMIT_DEG)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    ServoAngle,
    ThrusterSpeed,
}

impl ControlMode {
    pub fn toggled(self) -> Self {
        match self {
            ControlMode::ServoAngle => ControlMode::ThrusterSpeed,
            ControlMode::ThrusterSpeed => ControlMode::ServoAngle,
        }
    }
}

/// Mapping coefficients. `k1`–`k3` scale head-motion angles, `k4`/`k5`
/// scale throat amplitude, `k` is the multimodal acceleration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainConfig {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k: f64,
    /// Speed, rpm, mapped to the PWM range ends.
    pub max_speed: f64,
    /// Minimum softmax confidence for a throat token.
    pub reject_confidence: f64,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            k1: 2.0,
            k2: 1.0,
            k3: 1.0,
            k4: 90.0,
            k5: 1000.0,
            k: 200.0,
            max_speed: 1000.0,
            reject_confidence: 0.5,
        }
    }
}

impl GainConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("K1", self.k1),
            ("K2", self.k2),
            ("K3", self.k3),
            ("K4", self.k4),
            ("K5", self.k5),
            ("k", self.k),
            ("max_speed", self.max_speed),
            ("reject_confidence", self.reject_confidence),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("gain {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Updates one gain by name (`K1`…`K5`, `k`, `max_speed`,
    /// `reject_confidence`), rejecting non-positive values.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let mut next = self.clone();
        let slot = match name {
            "K1" | "k1" => &mut next.k1,
            "K2" | "k2" => &mut next.k2,
            "K3" | "k3" => &mut next.k3,
            "K4" | "k4" => &mut next.k4,
            "K5" | "k5" => &mut next.k5,
            "k" => &mut next.k,
            "max_speed" => &mut next.max_speed,
            "reject_confidence" => &mut next.reject_confidence,
            other => return Err(Error::arg(format!("unknown gain {other:?}"))),
        };
        *slot = value;
        next.validate()?;
        *self = next;
        Ok(())
    }
}

/// Linear symmetric speed→PWM map, clamped to [1100, 1900].
pub fn pwm_from_speed(speed: f64, max_speed: f64) -> u16 {
    let span = f64::from(PWM_MAX - PWM_NEUTRAL);
    let raw = f64::from(PWM_NEUTRAL) + span * speed / max_speed;
    if raw.is_nan() {
        return PWM_NEUTRAL;
    }
    raw.round().clamp(f64::from(PWM_MIN), f64::from(PWM_MAX)) as u16
}

/// Inverse of [`pwm_from_speed`] (before rounding).
pub fn speed_from_pwm(pwm: u16, max_speed: f64) -> f64 {
    (f64::from(pwm) - f64::from(PWM_NEUTRAL)) / f64::from(PWM_MAX - PWM_NEUTRAL) * max_speed
}

/// Proportional head-motion control. `angle` is the magnitude of the
/// governing Euler excursion in degrees.
pub fn map_head_proportional(class: HeadMotionClass, angle: f64, gains: &GainConfig) -> Setpoint {
    let a = angle.abs();
    match class {
        HeadMotionClass::Flexion => Setpoint::speed(-gains.k1 * a, -gains.k1 * a),
        HeadMotionClass::Extension => Setpoint::speed(gains.k1 * a, gains.k1 * a),
        HeadMotionClass::BendLeft => Setpoint::servo(gains.k2 * a, gains.k2 * a),
        HeadMotionClass::BendRight => Setpoint::servo(-gains.k2 * a, -gains.k2 * a),
        HeadMotionClass::RotateLeft => Setpoint::servo(-gains.k3 * a, gains.k3 * a),
        HeadMotionClass::RotateRight => Setpoint::servo(gains.k3 * a, -gains.k3 * a),
    }
}

/// Amplitude-scaled throat control; only do, re and mi are mapped.
pub fn map_throat_table2(scale: ScaleClass, duration_ms: f64, amplitude: f64, gains: &GainConfig) -> Result<Setpoint> {
    let a = amplitude.clamp(0.0, 1.0);
    let short = DurationClass::from_ms(duration_ms) == DurationClass::Short;
    let servo = a * gains.k4;
    let speed = a * gains.k5;
    Ok(match (scale, short) {
        (ScaleClass::Do, true) => Setpoint::servo(servo, servo),
        (ScaleClass::Do, false) => Setpoint::servo(-servo, -servo),
        (ScaleClass::Re, true) => Setpoint::servo(-servo, servo),
        (ScaleClass::Re, false) => Setpoint::servo(servo, -servo),
        (ScaleClass::Mi, true) => Setpoint::speed(speed, speed),
        (ScaleClass::Mi, false) => Setpoint::speed(-speed, -speed),
        (other, _) => {
            return Err(Error::Unsupported(format!(
                "scale {other} has no mapping in the throat-only scheme"
            )))
        }
    })
}

/// Change applied to one thruster's speed by a multimodal token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedChange {
    Hold,
    Accelerate(f64),
    Stop,
}

impl SpeedChange {
    pub fn apply(self, speed: f64, max_speed: f64) -> f64 {
        match self {
            SpeedChange::Hold => speed,
            SpeedChange::Accelerate(d) => (speed + d).clamp(-max_speed, max_speed),
            SpeedChange::Stop => 0.0,
        }
    }
}

/// Effect of one multimodal token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultimodalEffect {
    pub servo_left: Option<f64>,
    pub servo_right: Option<f64>,
    pub thruster_left: SpeedChange,
    pub thruster_right: SpeedChange,
    pub switch_mode: bool,
}

impl MultimodalEffect {
    fn hold() -> Self {
        Self {
            servo_left: None,
            servo_right: None,
            thruster_left: SpeedChange::Hold,
            thruster_right: SpeedChange::Hold,
            switch_mode: false,
        }
    }

    pub fn is_hold(&self) -> bool {
        *self == Self::hold()
    }
}

/// The raw multimodal row for an action vector, ignoring the mode.
pub fn table3_row(v: &ActionVector, gains: &GainConfig) -> Result<MultimodalEffect> {
    v.validate()?;
    let k = gains.k;
    let mut e = MultimodalEffect::hold();
    if let Some(head) = v.head {
        let (l, r) = match head {
            HeadMotionClass::RotateLeft => (Some(-90.0), None),
            HeadMotionClass::RotateRight => (Some(90.0), None),
            HeadMotionClass::BendLeft => (Some(90.0), None),
            HeadMotionClass::BendRight => (Some(-90.0), None),
            HeadMotionClass::Extension => (Some(-90.0), Some(-90.0)),
            HeadMotionClass::Flexion => (Some(90.0), Some(90.0)),
        };
        e.servo_left = l;
        e.servo_right = r;
        return Ok(e);
    }
    let (scale, duration) = (v.scale.expect("validated"), v.duration.expect("validated"));
    let step = match duration {
        DurationClass::Short => k,
        DurationClass::Long => -k,
    };
    match scale {
        ScaleClass::Do => e.thruster_left = SpeedChange::Accelerate(step),
        ScaleClass::Re => e.thruster_right = SpeedChange::Accelerate(step),
        ScaleClass::Mi => {
            e.thruster_left = SpeedChange::Stop;
            e.thruster_right = SpeedChange::Stop;
        }
        ScaleClass::Fa => {
            e.thruster_left = SpeedChange::Accelerate(step);
            e.thruster_right = SpeedChange::Accelerate(step);
        }
        ScaleClass::So => e.switch_mode = true,
    }
    Ok(e)
}

/// Multimodal mapping with mode gating: thruster rows act only in
/// thruster-speed mode, servo rows only in servo-angle mode, and `so`
/// toggles the mode in either.
pub fn map_multimodal_table3(
    v: &ActionVector,
    mode: ControlMode,
    gains: &GainConfig,
) -> Result<(MultimodalEffect, ControlMode)> {
    let row = table3_row(v, gains)?;
    if row.switch_mode {
        return Ok((row, mode.toggled()));
    }
    let applies = match mode {
        ControlMode::ServoAngle => v.head.is_some(),
        ControlMode::ThrusterSpeed => v.scale.is_some(),
    };
    Ok((if applies { row } else { MultimodalEffect::hold() }, mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Head,
    Throat,
    Multimodal,
}

impl Scheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "head" => Some(Scheme::Head),
            "throat" => Some(Scheme::Throat),
            "multimodal" => Some(Scheme::Multimodal),
            _ => None,
        }
    }
}

/// A classified token with the measurements the mappings need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", rename_all = "snake_case")]
pub enum Token {
    Head {
        class: HeadMotionClass,
        /// Peak excursion of the governing Euler angle, degrees.
        angle: f64,
    },
    Throat {
        scale: ScaleClass,
        duration_ms: f64,
        /// Peak 64 ms amplitude in [0, 1].
        amplitude: f64,
    },
}

impl Token {
    pub fn action_vector(&self) -> ActionVector {
        match *self {
            Token::Head { class, .. } => ActionVector::head(class),
            Token::Throat { scale, duration_ms, .. } => ActionVector::throat(scale, DurationClass::from_ms(duration_ms)),
        }
    }
}

/// Result of applying one token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOutcome {
    pub command: SuperlimbCommand,
    pub mode: ControlMode,
    pub mode_changed: bool,
}

/// Single-owner mapping state machine: holds the control mode and the
/// accumulated thruster speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapper {
    pub scheme: Scheme,
    pub gains: GainConfig,
    mode: ControlMode,
    speed: (f64, f64),
}

pub const INITIAL_MODE: ControlMode = ControlMode::ServoAngle;

impl Mapper {
    pub fn new(scheme: Scheme, gains: GainConfig) -> Result<Self> {
        gains.validate()?;
        Ok(Self {
            scheme,
            gains,
            mode: INITIAL_MODE,
            speed: (0.0, 0.0),
        })
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    /// Overrides the mode (operator control).
    pub fn set_mode(&mut self, mode: ControlMode) {
        self.mode = mode;
    }

    /// Accumulated multimodal thruster speeds, rpm.
    pub fn speeds(&self) -> (f64, f64) {
        self.speed
    }

    pub fn reset(&mut self) {
        self.mode = INITIAL_MODE;
        self.speed = (0.0, 0.0);
    }

    pub fn apply(&mut self, token: &Token) -> Result<MapOutcome> {
        let max = self.gains.max_speed;
        let before = self.mode;
        let command = match (self.scheme, *token) {
            (Scheme::Head, Token::Head { class, angle }) => {
                let sp = map_head_proportional(class, angle, &self.gains);
                if let Some(s) = sp.speed {
                    self.speed = (s.0.clamp(-max, max), s.1.clamp(-max, max));
                }
                sp.to_command(max)
            }
            (Scheme::Throat, Token::Throat { scale, duration_ms, amplitude }) => {
                let sp = map_throat_table2(scale, duration_ms, amplitude, &self.gains)?;
                if let Some(s) = sp.speed {
                    self.speed = (s.0.clamp(-max, max), s.1.clamp(-max, max));
                }
                sp.to_command(max)
            }
            (Scheme::Multimodal, t) => {
                let (effect, mode) = map_multimodal_table3(&t.action_vector(), self.mode, &self.gains)?;
                self.mode = mode;
                let left = effect.thruster_left.apply(self.speed.0, max);
                let right = effect.thruster_right.apply(self.speed.1, max);
                let cmd = SuperlimbCommand {
                    servo_left: effect.servo_left,
                    servo_right: effect.servo_right,
                    pwm_left: (effect.thruster_left != SpeedChange::Hold).then(|| pwm_from_speed(left, max)),
                    pwm_right: (effect.thruster_right != SpeedChange::Hold).then(|| pwm_from_speed(right, max)),
                };
                self.speed = (left, right);
                cmd
            }
            (scheme, t) => {
                return Err(Error::Unsupported(format!(
                    "{} token in the {scheme:?} scheme",
                    match t {
                        Token::Head { .. } => "head",
                        Token::Throat { .. } => "throat",
                    }
                )))
            }
        };
        Ok(MapOutcome {
            command,
            mode: self.mode,
            mode_changed: self.mode != before,
        })
    }
}
