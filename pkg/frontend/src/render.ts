// Top-down scene renderer.
//
// Screen convention: world axes are drawn directly onto the canvas (x right,
// y down, no mirroring), camera centered on the ego. Heading 0 therefore
// points right on screen, and a negative steer command curves the trace
// toward the viewer's left.

import { Frame } from "./protocol.js"

const SCALE = 9            // px per meter
const ROAD_COLOR = "#3a3f46"
const EDGE_COLOR = "#565e68"
const CHECKPOINT_COLOR = "#3f8cff"
const OBSTACLE_COLOR = "#b8544a"
const EGO_COLOR = "#e8e5da"

export function renderScene(
  ctx: CanvasRenderingContext2D,
  frame: Frame | null,
  badge: string | null,
  w: number,
  h: number,
): void {
  ctx.fillStyle = "#16181c"
  ctx.fillRect(0, 0, w, h)

  if (frame) {
    ctx.save()
    ctx.translate(w / 2 - frame.ego.x * SCALE, h / 2 - frame.ego.y * SCALE)
    drawRoad(ctx, frame)
    drawObstacles(ctx, frame)
    drawEgo(ctx, frame)
    ctx.restore()

    if (frame.takeover) {
      // Takeover state shown as a heavy red border
      ctx.strokeStyle = "#e03030"
      ctx.lineWidth = 8
      ctx.strokeRect(4, 4, w - 8, h - 8)
      ctx.fillStyle = "#e03030"
      ctx.font = "bold 14px system-ui, sans-serif"
      ctx.textAlign = "right"
      ctx.fillText("HUMAN CONTROL", w - 16, 26)
    }
  } else {
    ctx.fillStyle = "#777"
    ctx.font = "14px system-ui, sans-serif"
    ctx.textAlign = "center"
    ctx.fillText("waiting for frames…", w / 2, h / 2)
  }

  if (badge) {
    ctx.fillStyle = "rgba(200, 160, 30, 0.92)"
    const label = `⚠ ${badge}`
    ctx.font = "12px system-ui, sans-serif"
    ctx.textAlign = "left"
    const tw = ctx.measureText(label).width
    ctx.fillRect(8, 8, tw + 16, 22)
    ctx.fillStyle = "#1a1a1a"
    ctx.fillText(label, 16, 23)
  }
}

function drawRoad(ctx: CanvasRenderingContext2D, frame: Frame): void {
  const pts = frame.checkpoints
  if (pts.length >= 2) {
    // Ribbon: the route polyline stroked at full road width, round joins
    ctx.beginPath()
    ctx.moveTo(pts[0][0] * SCALE, pts[0][1] * SCALE)
    for (const [x, y] of pts.slice(1)) {
      ctx.lineTo(x * SCALE, y * SCALE)
    }
    ctx.lineCap = "round"
    ctx.lineJoin = "round"
    ctx.strokeStyle = EDGE_COLOR
    ctx.lineWidth = 2 * frame.half_width * SCALE + 3
    ctx.stroke()
    ctx.strokeStyle = ROAD_COLOR
    ctx.lineWidth = 2 * frame.half_width * SCALE
    ctx.stroke()
  }
  // Upcoming checkpoints, nearest one brightest
  for (let i = 0; i < pts.length; i++) {
    ctx.beginPath()
    ctx.arc(pts[i][0] * SCALE, pts[i][1] * SCALE, i === 0 ? 4 : 2.5, 0, 2 * Math.PI)
    ctx.fillStyle = i === 0 ? "#6fb0ff" : CHECKPOINT_COLOR
    ctx.fill()
  }
}

function drawObstacles(ctx: CanvasRenderingContext2D, frame: Frame): void {
  for (const [x, y, r, vx, vy] of frame.obstacles) {
    ctx.beginPath()
    ctx.arc(x * SCALE, y * SCALE, r * SCALE, 0, 2 * Math.PI)
    ctx.fillStyle = OBSTACLE_COLOR
    ctx.fill()
    if (vx !== 0 || vy !== 0) {
      // velocity tick for drifting obstacles
      ctx.beginPath()
      ctx.moveTo(x * SCALE, y * SCALE)
      ctx.lineTo((x + vx * 2) * SCALE, (y + vy * 2) * SCALE)
      ctx.strokeStyle = "#e0b0a8"
      ctx.lineWidth = 1.5
      ctx.stroke()
    }
  }
}

function drawEgo(ctx: CanvasRenderingContext2D, frame: Frame): void {
  const { x, y, heading } = frame.ego
  ctx.save()
  ctx.translate(x * SCALE, y * SCALE)
  ctx.rotate(heading)
  // wedge pointing along +x, i.e. to the right at heading 0
  ctx.beginPath()
  ctx.moveTo(7, 0)
  ctx.lineTo(-5, -4.5)
  ctx.lineTo(-3, 0)
  ctx.lineTo(-5, 4.5)
  ctx.closePath()
  ctx.fillStyle = EGO_COLOR
  ctx.fill()
  ctx.restore()
}
