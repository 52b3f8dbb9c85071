// Hand-rolled rolling strip charts (no chart library: two tiny line plots).

import { Series } from "./telemetry.js"

const BG = "#1c1f24"
const GRID = "#31363d"
const TEXT = "#9aa3ad"

export function drawChart(
  ctx: CanvasRenderingContext2D,
  title: string,
  series: Series[],
  w: number,
  h: number,
  fixedRange?: [number, number],
): void {
  ctx.fillStyle = BG
  ctx.fillRect(0, 0, w, h)

  const left = 44
  const right = w - 8
  const top = 18
  const bottom = h - 14

  const populated = series.filter((s) => s.steps.length > 0)
  let lo = fixedRange ? fixedRange[0] : Infinity
  let hi = fixedRange ? fixedRange[1] : -Infinity
  if (!fixedRange) {
    for (const s of populated) {
      for (const v of s.values) {
        lo = Math.min(lo, v)
        hi = Math.max(hi, v)
      }
    }
    if (!populated.length) {
      lo = 0
      hi = 1
    }
    if (hi - lo < 1e-9) {
      lo -= 0.5
      hi += 0.5
    }
  }
  let sMin = Infinity
  let sMax = -Infinity
  for (const s of populated) {
    sMin = Math.min(sMin, s.steps[0])
    sMax = Math.max(sMax, s.steps[s.steps.length - 1])
  }
  if (!populated.length || sMax <= sMin) {
    sMin = 0
    sMax = 1
  }

  const px = (step: number) => left + ((step - sMin) / (sMax - sMin)) * (right - left)
  const py = (v: number) => bottom - ((v - lo) / (hi - lo)) * (bottom - top)

  // grid + y labels
  ctx.strokeStyle = GRID
  ctx.fillStyle = TEXT
  ctx.font = "10px system-ui, sans-serif"
  ctx.textAlign = "right"
  ctx.lineWidth = 1
  for (const frac of [0, 0.5, 1]) {
    const v = lo + frac * (hi - lo)
    const y = py(v)
    ctx.beginPath()
    ctx.moveTo(left, y)
    ctx.lineTo(right, y)
    ctx.stroke()
    ctx.fillText(v.toFixed(2), left - 4, y + 3)
  }

  for (const s of populated) {
    ctx.beginPath()
    for (let i = 0; i < s.steps.length; i++) {
      const x = px(s.steps[i])
      const y = py(s.values[i])
      if (i === 0) {
        ctx.moveTo(x, y)
      } else {
        ctx.lineTo(x, y)
      }
    }
    ctx.strokeStyle = s.color
    ctx.lineWidth = 1.5
    ctx.stroke()
  }

  // title + legend with last values
  ctx.textAlign = "left"
  ctx.fillStyle = TEXT
  ctx.font = "11px system-ui, sans-serif"
  ctx.fillText(title, left, 12)
  let lx = left + ctx.measureText(title).width + 18
  for (const s of series) {
    ctx.fillStyle = s.color
    ctx.fillRect(lx, 5, 9, 9)
    ctx.fillStyle = TEXT
    const last = s.values.length ? s.values[s.values.length - 1].toFixed(3) : "–"
    const label = `${s.label} ${last}`
    ctx.fillText(label, lx + 13, 13)
    lx += 13 + ctx.measureText(label).width + 14
  }
}
