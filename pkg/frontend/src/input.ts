// Keyboard / gamepad → (steer, accel) in [-1, 1]².
//
// Keyboard axes are rate-based: a held arrow ramps the axis toward full
// deflection at a fixed slew rate and release decays it back to zero, which
// approximates wheel behavior without hardware. Gamepad sticks map linearly
// and take precedence while deflected past the deadzone.

export const DEADZONE = 0.05
const SLEW_PER_S = 2.5    // 0 → full deflection in 0.4 s
const DECAY_PER_S = 4.0   // release → centered in 0.25 s

export function applyDeadzone(v: number): number {
  return Math.abs(v) < DEADZONE ? 0 : Math.max(-1, Math.min(1, v))
}

function ramp(value: number, dir: number, dt: number): number {
  if (dir !== 0) {
    value += dir * SLEW_PER_S * dt
  } else if (value > 0) {
    value = Math.max(0, value - DECAY_PER_S * dt)
  } else if (value < 0) {
    value = Math.min(0, value + DECAY_PER_S * dt)
  }
  return Math.max(-1, Math.min(1, value))
}

export interface Axes {
  steer: number
  accel: number
}

export class ControlInput {
  private held = new Set<string>()
  private kbSteer = 0
  private kbAccel = 0
  private padSteer = 0
  private padAccel = 0

  // Returns true when the key is one of ours (caller preventDefaults).
  keyDown(code: string): boolean {
    if (code === "ArrowLeft" || code === "ArrowRight"
      || code === "ArrowUp" || code === "ArrowDown") {
      this.held.add(code)
      return true
    }
    return code === "Space"
  }

  keyUp(code: string): void {
    this.held.delete(code)
  }

  // Raw stick values from the standard mapping; deadzone applied here.
  setGamepad(steerAxis: number, accelAxis: number): void {
    this.padSteer = applyDeadzone(steerAxis)
    this.padAccel = applyDeadzone(accelAxis)
  }

  clearGamepad(): void {
    this.padSteer = 0
    this.padAccel = 0
  }

  // Advance the keyboard ramps and report the blended axes.
  // Left arrow steers negative (which reads as a left turn on the y-down
  // canvas); up arrow is positive acceleration.
  tick(dt: number): Axes {
    const steerDir = (this.held.has("ArrowRight") ? 1 : 0)
      - (this.held.has("ArrowLeft") ? 1 : 0)
    const accelDir = (this.held.has("ArrowUp") ? 1 : 0)
      - (this.held.has("ArrowDown") ? 1 : 0)
    this.kbSteer = ramp(this.kbSteer, steerDir, dt)
    this.kbAccel = ramp(this.kbAccel, accelDir, dt)
    return {
      steer: this.padSteer !== 0 ? this.padSteer : this.kbSteer,
      accel: this.padAccel !== 0 ? this.padAccel : this.kbAccel,
    }
  }
}
