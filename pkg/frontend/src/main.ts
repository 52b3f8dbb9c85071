// Page wiring: socket lifecycle, input loop, rendering at display refresh.
//
// The bridge endpoint comes from the ?ws= query parameter, e.g.
//   index.html?ws=ws://127.0.0.1:8765
// Rendering runs on requestAnimationFrame, decoupled from frame arrival;
// action commands go out once per received frame while engaged.

import { ControlInput } from "./input.js"
import { renderScene } from "./render.js"
import { drawChart } from "./charts.js"
import { Session } from "./session.js"
import { TelemetryLog } from "./telemetry.js"

const params = new URLSearchParams(location.search)
const endpoint = params.get("ws") ?? "ws://127.0.0.1:8765"

const scene = document.getElementById("scene") as HTMLCanvasElement
const takeoverChart = document.getElementById("chart-takeover") as HTMLCanvasElement
const qChart = document.getElementById("chart-q") as HTMLCanvasElement
const statusLine = document.getElementById("status") as HTMLElement
const counterLine = document.getElementById("counters") as HTMLElement

const sceneCtx = scene.getContext("2d")!
const takeoverCtx = takeoverChart.getContext("2d")!
const qCtx = qChart.getContext("2d")!

const input = new ControlInput()
const telemetry = new TelemetryLog()

let session: Session | null = null
let socket: WebSocket | null = null
let axes = { steer: 0, accel: 0 }
let retryTimer: number | null = null

function connect(): void {
  socket = new WebSocket(endpoint)
  const ws = socket
  const s = new Session((text) => {
    if (ws.readyState === WebSocket.OPEN) {
      ws.send(text)
    }
  })
  session = s
  s.onFrame = (frame) => {
    telemetry.push(frame.step, frame.takeover_rate, frame.q_human, frame.q_novice)
    s.sendAction(axes.steer, axes.accel)
  }
  ws.onopen = () => s.hello()
  ws.onmessage = (ev) => {
    if (typeof ev.data === "string") {
      s.handleMessage(ev.data)
    }
  }
  ws.onclose = () => {
    s.closed()
    // a reconnect only ever restores a view; control must be re-requested
    if (s.phase !== "refused" && retryTimer === null) {
      retryTimer = window.setTimeout(() => {
        retryTimer = null
        connect()
      }, 1500)
    }
  }
}

window.addEventListener("keydown", (ev) => {
  if (ev.code === "Space" && !ev.repeat) {
    session?.toggle()
  }
  if (input.keyDown(ev.code)) {
    ev.preventDefault()
  }
})
window.addEventListener("keyup", (ev) => input.keyUp(ev.code))

function pollGamepad(): void {
  const pads = navigator.getGamepads ? navigator.getGamepads() : []
  for (const pad of pads) {
    if (pad && pad.mapping === "standard") {
      // left stick: axis 0 = steer, axis 1 = forward/back (up is negative)
      input.setGamepad(pad.axes[0] ?? 0, -(pad.axes[1] ?? 0))
      return
    }
  }
  input.clearGamepad()
}

function describe(s: Session | null): string {
  if (!s) {
    return "idle"
  }
  switch (s.phase) {
    case "connecting":
      return `connecting to ${endpoint}…`
    case "refused":
      return `refused: ${s.refusalReason}`
    case "closed":
      return "disconnected — retrying"
    case "ready": {
      const role = s.role === "control" ? "control" : "read-only"
      const mode = s.engaged ? "ENGAGED" : "observing"
      return `${role} · ${mode} · space toggles takeover`
    }
  }
}

let lastTime = performance.now()

function loop(now: number): void {
  const dt = Math.min((now - lastTime) / 1000, 0.1)
  lastTime = now
  pollGamepad()
  axes = input.tick(dt)

  const s = session
  renderScene(sceneCtx, s?.frame ?? null, s?.badge ?? null, scene.width, scene.height)
  drawChart(takeoverCtx, "takeover rate", [telemetry.takeoverRate],
    takeoverChart.width, takeoverChart.height, [0, 1])
  drawChart(qCtx, "proxy value", [telemetry.qHuman, telemetry.qNovice],
    qChart.width, qChart.height)

  statusLine.textContent = describe(s)
  statusLine.className = s?.engaged ? "engaged" : ""
  const f = s?.frame
  counterLine.textContent = f
    ? `step ${f.step} · episodes ${f.episodes} · collisions ${f.collisions}`
      + ` · human ${f.human_data}/${f.total_data}`
      + (s && s.staleDropped ? ` · stale dropped ${s.staleDropped}` : "")
    : ""
  requestAnimationFrame(loop)
}

connect()
requestAnimationFrame(loop)
