// Wire schema for the trainer's supervision socket (schema version 1).
//
// A frame is one JSON text message per environment step; commands flow the
// other way. Encoding is canonical: keys sorted, no whitespace, so identical
// payloads are identical bytes. Everything here mirrors PROTOCOL.md in the
// trainer repository — this module is the only coupling point.

export const SCHEMA_VERSION = 1

export interface EgoPose {
  x: number
  y: number
  heading: number   // rad, 0 points along +x
  speed: number     // m/s
}

export interface Frame {
  type: "frame"
  v: number
  step: number
  ego: EgoPose
  half_width: number
  obstacles: number[][]     // rows [x, y, radius, vx, vy]
  checkpoints: number[][]   // upcoming route points, nearest first
  takeover: boolean
  takeover_rate: number
  q_human: number
  q_novice: number
  episodes: number
  collisions: number
  human_data: number
  total_data: number
}

export type CommandKind = "engage" | "disengage" | "action"

export interface Command {
  type: "command"
  kind: CommandKind
  stamp: number             // client clock, seconds
  action?: [number, number] // (steer, accel), present iff kind = "action"
}

export interface Welcome {
  type: "welcome"
  v: number
  role: "control" | "readonly"
}

export class WireError extends Error {}

// JSON.stringify with object keys sorted at every level.
export function canonical(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value)
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonical).join(",") + "]"
  }
  const keys = Object.keys(value as Record<string, unknown>).sort()
  const parts = keys.map(
    (k) => JSON.stringify(k) + ":" + canonical((value as Record<string, unknown>)[k]),
  )
  return "{" + parts.join(",") + "}"
}

function finiteNumber(v: unknown, where: string): number {
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new WireError(`${where}: expected a finite number`)
  }
  return v
}

function pointRows(v: unknown, width: number, where: string): number[][] {
  if (!Array.isArray(v)) {
    throw new WireError(`${where}: expected an array`)
  }
  return v.map((row, i) => {
    if (!Array.isArray(row) || row.length !== width) {
      throw new WireError(`${where}[${i}]: expected ${width} numbers`)
    }
    return row.map((x, j) => finiteNumber(x, `${where}[${i}][${j}]`))
  })
}

export function decodeFrame(text: string): Frame {
  let raw: unknown
  try {
    raw = JSON.parse(text)
  } catch (e) {
    throw new WireError(`frame is not JSON: ${e}`)
  }
  if (typeof raw !== "object" || raw === null) {
    throw new WireError("frame is not an object")
  }
  const m = raw as Record<string, unknown>
  if (m.type !== "frame") {
    throw new WireError(`unexpected message type ${JSON.stringify(m.type)}`)
  }
  if (m.v !== SCHEMA_VERSION) {
    throw new WireError(`schema version ${m.v}, this console speaks ${SCHEMA_VERSION}`)
  }
  const ego = m.ego as Record<string, unknown>
  if (typeof ego !== "object" || ego === null) {
    throw new WireError("frame.ego missing")
  }
  return {
    type: "frame",
    v: SCHEMA_VERSION,
    step: finiteNumber(m.step, "step"),
    ego: {
      x: finiteNumber(ego.x, "ego.x"),
      y: finiteNumber(ego.y, "ego.y"),
      heading: finiteNumber(ego.heading, "ego.heading"),
      speed: finiteNumber(ego.speed, "ego.speed"),
    },
    half_width: finiteNumber(m.half_width, "half_width"),
    obstacles: pointRows(m.obstacles, 5, "obstacles"),
    checkpoints: pointRows(m.checkpoints, 2, "checkpoints"),
    takeover: Boolean(m.takeover),
    takeover_rate: finiteNumber(m.takeover_rate, "takeover_rate"),
    q_human: finiteNumber(m.q_human, "q_human"),
    q_novice: finiteNumber(m.q_novice, "q_novice"),
    episodes: finiteNumber(m.episodes, "episodes"),
    collisions: finiteNumber(m.collisions, "collisions"),
    human_data: finiteNumber(m.human_data, "human_data"),
    total_data: finiteNumber(m.total_data, "total_data"),
  }
}

export function encodeFrame(frame: Frame): string {
  return canonical(frame)
}

export function encodeCommand(
  kind: CommandKind,
  action?: [number, number],
  stamp?: number,
): string {
  const hasAction = action !== undefined
  if (hasAction !== (kind === "action")) {
    throw new WireError("action payload present iff kind=action")
  }
  const msg: Command = {
    type: "command",
    kind,
    stamp: stamp ?? Date.now() / 1000,
  }
  if (action) {
    const [steer, accel] = action
    for (const v of [steer, accel]) {
      if (!Number.isFinite(v) || Math.abs(v) > 1.0) {
        throw new WireError("action components must be finite in [-1, 1]")
      }
    }
    msg.action = [steer, accel]
  }
  return canonical(msg)
}

export function decodeCommand(text: string): Command {
  let raw: unknown
  try {
    raw = JSON.parse(text)
  } catch (e) {
    throw new WireError(`command is not JSON: ${e}`)
  }
  const m = raw as Record<string, unknown>
  if (typeof m !== "object" || m === null || m.type !== "command") {
    throw new WireError("not a command message")
  }
  const kind = m.kind
  if (kind !== "engage" && kind !== "disengage" && kind !== "action") {
    throw new WireError(`unknown command kind ${JSON.stringify(kind)}`)
  }
  const hasAction = "action" in m
  if (hasAction !== (kind === "action")) {
    throw new WireError("action payload present iff kind=action")
  }
  const out: Command = {
    type: "command",
    kind,
    stamp: finiteNumber(m.stamp, "stamp"),
  }
  if (hasAction) {
    const pair = pointRows([m.action], 2, "action")[0]
    if (Math.abs(pair[0]) > 1.0 || Math.abs(pair[1]) > 1.0) {
      throw new WireError("action components must be finite in [-1, 1]")
    }
    out.action = [pair[0], pair[1]]
  }
  return out
}

export function helloMessage(): string {
  return canonical({ type: "hello", v: SCHEMA_VERSION })
}
