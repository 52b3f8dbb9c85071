// Connection state machine, socket-agnostic so it can be driven in tests.
//
// The engaged flag deliberately mirrors the last *acknowledged* command, not
// the last request — until the server acks, the UI shows the old state. The
// rendered step index never decreases: a frame at or behind the newest one
// is dropped (stale delivery), and a malformed frame raises the error badge
// while the last good frame stays on screen.

import {
  Frame, SCHEMA_VERSION, WireError, decodeFrame, encodeCommand, helloMessage,
} from "./protocol.js"

export type Phase = "connecting" | "ready" | "refused" | "closed"
export type Role = "control" | "readonly" | null

export class Session {
  phase: Phase = "connecting"
  role: Role = null
  engaged = false
  frame: Frame | null = null
  badge: string | null = null
  refusalReason = ""
  framesSeen = 0
  staleDropped = 0

  onFrame: ((frame: Frame) => void) | null = null

  constructor(private send: (text: string) => void) {}

  hello(): void {
    this.send(helloMessage())
  }

  requestEngage(): void {
    this.send(encodeCommand("engage"))
  }

  requestDisengage(): void {
    this.send(encodeCommand("disengage"))
  }

  toggle(): void {
    if (this.engaged) {
      this.requestDisengage()
    } else {
      this.requestEngage()
    }
  }

  // While engaged, one action message per received frame = the control rate.
  sendAction(steer: number, accel: number): void {
    if (!this.engaged) {
      return
    }
    const clamp = (v: number) => Math.max(-1, Math.min(1, v))
    this.send(encodeCommand("action", [clamp(steer), clamp(accel)]))
  }

  closed(): void {
    if (this.phase !== "refused") {
      this.phase = "closed"
    }
    this.engaged = false
    this.role = null
  }

  handleMessage(text: string): void {
    let raw: Record<string, unknown>
    try {
      raw = JSON.parse(text)
    } catch {
      this.badge = "unreadable message from server"
      return
    }
    switch (raw.type) {
      case "welcome":
        if (raw.v !== SCHEMA_VERSION) {
          this.phase = "refused"
          this.refusalReason = `server schema v${raw.v}`
          return
        }
        this.phase = "ready"
        this.role = raw.role === "control" ? "control" : "readonly"
        return
      case "refused":
        this.phase = "refused"
        this.refusalReason = String(raw.reason ?? "no reason given")
        return
      case "ack":
        if (raw.kind === "engage") {
          this.engaged = true
        } else if (raw.kind === "disengage") {
          this.engaged = false
        }
        return
      case "error":
        this.badge = String(raw.error ?? "server error")
        return
      case "frame":
        this.handleFrame(text)
        return
      default:
        this.badge = `unknown message type ${JSON.stringify(raw.type)}`
    }
  }

  private handleFrame(text: string): void {
    let frame: Frame
    try {
      frame = decodeFrame(text)
    } catch (e) {
      this.badge = e instanceof WireError ? e.message : String(e)
      return
    }
    if (this.frame !== null && frame.step <= this.frame.step) {
      this.staleDropped += 1
      return
    }
    this.frame = frame
    this.framesSeen += 1
    this.badge = null
    if (this.onFrame) {
      this.onFrame(frame)
    }
  }
}
