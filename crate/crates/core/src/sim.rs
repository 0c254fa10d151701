//! Deterministic superlimb plant: two rate-limited first-order servos and
//! two first-order thrusters whose thrust grows with the square of speed.
//!
//! Each fixed step uses the exact zero-order-hold solution of the first-order
//! response, so a held command decays exactly exponentially regardless of
//! the step size.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::{speed_from_pwm, SuperlimbCommand, PWM_NEUTRAL, SERVO_LIMIT_DEG};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// Servo time constant, seconds.
    pub tau_servo: f64,
    /// Servo slew limit, degrees per second.
    pub servo_rate_max: f64,
    /// Thruster spin-up time constant, seconds.
    pub tau_thruster: f64,
    /// Thrust coefficient, N/rpm².
    pub thrust_coeff: f64,
    pub max_speed: f64,
    /// Integration step, seconds.
    pub dt: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            tau_servo: 0.1,
            servo_rate_max: 180.0,
            tau_thruster: 0.3,
            thrust_coeff: 2.5e-5,
            max_speed: 1000.0,
            dt: 0.01,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_servo", self.tau_servo),
            ("servo_rate_max", self.servo_rate_max),
            ("tau_thruster", self.tau_thruster),
            ("thrust_coeff", self.thrust_coeff),
            ("max_speed", self.max_speed),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!("plant {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SuperlimbState {
    pub t: f64,
    /// Degrees.
    pub servo_left: f64,
    pub servo_right: f64,
    /// Signed rpm.
    pub rpm_left: f64,
    pub rpm_right: f64,
    /// Newtons.
    pub thrust_left: f64,
    pub thrust_right: f64,
}

impl SuperlimbState {
    /// Range invariants for the given speed limit.
    pub fn in_bounds(&self, max_speed: f64) -> bool {
        let sign_ok = |rpm: f64, thrust: f64| rpm.signum() == thrust.signum() || rpm == 0.0 || thrust == 0.0;
        self.servo_left.abs() <= SERVO_LIMIT_DEG
            && self.servo_right.abs() <= SERVO_LIMIT_DEG
            && self.rpm_left.abs() <= max_speed
            && self.rpm_right.abs() <= max_speed
            && sign_ok(self.rpm_left, self.thrust_left)
            && sign_ok(self.rpm_right, self.thrust_right)
    }
}

fn servo_step(angle: f64, target: Option<f64>, dt: f64, plant: &PlantConfig) -> f64 {
    let Some(target) = target else { return angle };
    let target = target.clamp(-SERVO_LIMIT_DEG, SERVO_LIMIT_DEG);
    let delta = (target - angle) * (1.0 - (-dt / plant.tau_servo).exp());
    let limit = plant.servo_rate_max * dt;
    (angle + delta.clamp(-limit, limit)).clamp(-SERVO_LIMIT_DEG, SERVO_LIMIT_DEG)
}

fn rpm_step(rpm: f64, pwm: Option<u16>, dt: f64, plant: &PlantConfig) -> f64 {
    let Some(pwm) = pwm else { return rpm };
    let target = speed_from_pwm(pwm, plant.max_speed).clamp(-plant.max_speed, plant.max_speed);
    (target + (rpm - target) * (-dt / plant.tau_thruster).exp()).clamp(-plant.max_speed, plant.max_speed)
}

pub fn thrust(rpm: f64, plant: &PlantConfig) -> f64 {
    plant.thrust_coeff * rpm * rpm.abs()
}

/// Advances the plant by `dt`. Held (`None`) command fields freeze that
/// actuator at its current value.
pub fn step(state: &SuperlimbState, command: &SuperlimbCommand, dt: f64, plant: &PlantConfig) -> Result<SuperlimbState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::arg(format!("step dt must be positive, got {dt}")));
    }
    let rpm_left = rpm_step(state.rpm_left, command.pwm_left, dt, plant);
    let rpm_right = rpm_step(state.rpm_right, command.pwm_right, dt, plant);
    Ok(SuperlimbState {
        t: state.t + dt,
        servo_left: servo_step(state.servo_left, command.servo_left, dt, plant),
        servo_right: servo_step(state.servo_right, command.servo_right, dt, plant),
        rpm_left,
        rpm_right,
        thrust_left: thrust(rpm_left, plant),
        thrust_right: thrust(rpm_right, plant),
    })
}

/// Command in force before any token: servos centred, thrusters neutral.
pub fn neutral_command() -> SuperlimbCommand {
    SuperlimbCommand {
        servo_left: Some(0.0),
        servo_right: Some(0.0),
        pwm_left: Some(PWM_NEUTRAL),
        pwm_right: Some(PWM_NEUTRAL),
    }
}

/// One row of a trace: the command in force and the resulting feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub command: SuperlimbCommand,
    pub state: SuperlimbState,
}

/// Stepped plant holding the command in force (zero-order hold).
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    cfg: PlantConfig,
    state: SuperlimbState,
    command: SuperlimbCommand,
    steps: u64,
}

impl Plant {
    pub fn new(cfg: PlantConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: SuperlimbState::default(),
            command: neutral_command(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SuperlimbState {
        &self.state
    }

    pub fn command(&self) -> &SuperlimbCommand {
        &self.command
    }

    /// Time of the next step boundary.
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.cfg.dt
    }

    /// Merges a new command into the one in force.
    pub fn apply(&mut self, command: &SuperlimbCommand) {
        self.command = self.command.merged(command);
    }

    /// Records the current row and advances one step.
    pub fn tick(&mut self) -> TraceRow {
        let row = TraceRow {
            t: self.time(),
            command: self.command,
            state: SuperlimbState { t: self.time(), ..self.state },
        };
        self.state = step(&self.state, &self.command, self.cfg.dt, &self.cfg).expect("validated dt");
        self.steps += 1;
        self.state.t = self.time();
        row
    }

    /// Steps while the next boundary is strictly before `t`.
    pub fn advance_to(&mut self, t: f64) -> Vec<TraceRow> {
        let mut rows = Vec::new();
        while self.time() < t - 1e-9 {
            rows.push(self.tick());
        }
        rows
    }
}

/// Fixed-step simulation of a time-ordered command list from `t = 0` to
/// `end_t` inclusive. A command takes effect at the first step at or after
/// its timestamp.
pub fn run_trace(commands: &[(f64, SuperlimbCommand)], end_t: f64, plant: &PlantConfig) -> Result<Vec<TraceRow>> {
    if commands.windows(2).any(|w| w[1].0 < w[0].0) || commands.iter().any(|c| !c.0.is_finite()) {
        return Err(Error::Contract("commands must be time-ordered".into()));
    }
    let mut p = Plant::new(plant.clone())?;
    let mut rows = Vec::new();
    let mut next = 0;
    loop {
        let t = p.time();
        if t > end_t + 1e-9 {
            break;
        }
        while next < commands.len() && commands[next].0 <= t + 1e-9 {
            p.apply(&commands[next].1);
            next += 1;
        }
        rows.push(p.tick());
    }
    Ok(rows)
}

pub const TRACE_CSV_HEADER: [&str; 11] = [
    "t",
    "cmd_servo_l",
    "cmd_servo_r",
    "fb_servo_l",
    "fb_servo_r",
    "cmd_pwm_l",
    "cmd_pwm_r",
    "fb_rpm_l",
    "fb_rpm_r",
    "thrust_l",
    "thrust_r",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv_to<W: Write>(writer: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Validation(format!("trace CSV: {e}"));
    w.write_record(TRACE_CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        let c = &r.command;
        let s = &r.state;
        w.write_record([
            r.t.to_string(),
            opt(c.servo_left),
            opt(c.servo_right),
            s.servo_left.to_string(),
            s.servo_right.to_string(),
            opt(c.pwm_left),
            opt(c.pwm_right),
            s.rpm_left.to_string(),
            s.rpm_right.to_string(),
            s.thrust_left.to_string(),
            s.thrust_right.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Validation(format!("trace CSV: {e}")))?;
    Ok(())
}

pub fn write_trace_csv(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv_to(std::io::BufWriter::new(file), rows)
}
