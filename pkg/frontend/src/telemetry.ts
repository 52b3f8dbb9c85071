// Rolling telemetry extracted from the frame stream for the strip charts.

export const HISTORY_CAP = 600

export interface Series {
  label: string
  color: string
  steps: number[]
  values: number[]
}

export class TelemetryLog {
  readonly takeoverRate: Series = {
    label: "takeover rate", color: "#e0a030", steps: [], values: [],
  }
  readonly qHuman: Series = {
    label: "Q human", color: "#4caf70", steps: [], values: [],
  }
  readonly qNovice: Series = {
    label: "Q novice", color: "#d06060", steps: [], values: [],
  }

  constructor(private cap: number = HISTORY_CAP) {}

  push(step: number, takeoverRate: number, qHuman: number, qNovice: number): void {
    for (const [series, value] of [
      [this.takeoverRate, takeoverRate],
      [this.qHuman, qHuman],
      [this.qNovice, qNovice],
    ] as Array<[Series, number]>) {
      series.steps.push(step)
      series.values.push(value)
      if (series.steps.length > this.cap) {
        series.steps.shift()
        series.values.shift()
      }
    }
  }

  get length(): number {
    return this.takeoverRate.steps.length
  }
}
