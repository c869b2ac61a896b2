/** Estimate-trajectory chart: pure model building plus an SVG renderer.
 *
 * The chart plots exactly the service's history snapshots (estimate vs
 * vetted fraction) with no smoothing or interpolation of any kind. The
 * per-category toggle adds one series per category on top of the overall
 * mean.
 */

import type { EstimateSnapshot } from "./types.js";

export interface ChartPoint {
  x: number; // vetted fraction
  y: number; // estimate
}

export interface ChartSeries {
  label: string;
  points: ChartPoint[];
}

export interface ChartModel {
  series: ChartSeries[];
  exact: boolean; // terminal badge: the last snapshot is fully vetted
  singlePoint: boolean; // one marker, no line
}

export function buildChartModel(
  history: EstimateSnapshot[],
  showCategories: boolean,
): ChartModel {
  if (history.length === 0) {
    throw new Error("chart needs at least one history point");
  }
  const overall: ChartSeries = {
    label: "overall",
    points: history
      .filter((h) => h.overall !== null)
      .map((h) => ({ x: h.vetted_fraction, y: h.overall as number })),
  };
  const series: ChartSeries[] = [overall];
  if (showCategories) {
    const categories = Object.keys(history[history.length - 1]!.per_category).sort();
    for (const category of categories) {
      series.push({
        label: category,
        points: history
          .filter((h) => h.per_category[category] != null)
          .map((h) => ({ x: h.vetted_fraction, y: h.per_category[category] as number })),
      });
    }
  }
  return {
    series,
    exact: history[history.length - 1]!.exact,
    singlePoint: history.length === 1,
  };
}

const WIDTH = 640;
const HEIGHT = 240;
const PAD = 28;

const PALETTE = [
  "#1c64d1",
  "#d13c1c",
  "#1ca64a",
  "#b01cd1",
  "#d1a61c",
  "#1cb7d1",
  "#d11c7a",
  "#6ad11c",
];

function scaleX(x: number): number {
  return PAD + x * (WIDTH - 2 * PAD);
}

function scaleY(y: number): number {
  return HEIGHT - PAD - y * (HEIGHT - 2 * PAD);
}

/** Render the model to a standalone SVG string. */
export function renderChartSvg(model: ChartModel): string {
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${WIDTH} ${HEIGHT}" class="estimate-chart">`,
    `<rect x="0" y="0" width="${WIDTH}" height="${HEIGHT}" fill="none"/>`,
    `<line x1="${PAD}" y1="${HEIGHT - PAD}" x2="${WIDTH - PAD}" y2="${HEIGHT - PAD}" stroke="#888"/>`,
    `<line x1="${PAD}" y1="${PAD}" x2="${PAD}" y2="${HEIGHT - PAD}" stroke="#888"/>`,
  ];
  model.series.forEach((series, index) => {
    const color = PALETTE[index % PALETTE.length]!;
    if (!model.singlePoint && series.points.length > 1) {
      const path = series.points
        .map((p, i) => `${i === 0 ? "M" : "L"}${scaleX(p.x).toFixed(1)},${scaleY(p.y).toFixed(1)}`)
        .join(" ");
      parts.push(`<path d="${path}" fill="none" stroke="${color}" stroke-width="1.5"/>`);
    }
    for (const p of series.points) {
      parts.push(
        `<circle cx="${scaleX(p.x).toFixed(1)}" cy="${scaleY(p.y).toFixed(1)}" r="3" fill="${color}"/>`,
      );
    }
    parts.push(
      `<text x="${WIDTH - PAD + 4}" y="${PAD + 14 * index}" fill="${color}" font-size="11">${series.label}</text>`,
    );
  });
  if (model.exact) {
    parts.push(
      `<text x="${PAD}" y="${PAD - 8}" fill="#1ca64a" font-size="12" class="badge-exact">exact</text>`,
    );
  }
  parts.push("</svg>");
  return parts.join("");
}
