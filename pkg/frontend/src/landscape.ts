// Market landscape presentation: a slice-and-dice treemap over the
// server-provided entity counts and a color ramp for geo buckets. Layout is
// presentation only; every number comes from the /landscape response.

import { ApiClient, LandscapeView } from "./api.js";

export interface TreemapCell {
  name: string;
  count: number;
  x: number;
  y: number;
  w: number;
  h: number;
}

export function treemapLayout(
  entities: { name: string; count: number }[],
  width: number,
  height: number,
): TreemapCell[] {
  const total = entities.reduce((sum, e) => sum + e.count, 0);
  if (total === 0) return [];
  const cells: TreemapCell[] = [];
  let x = 0;
  let y = 0;
  let w = width;
  let h = height;
  let remaining = total;
  for (const [index, entity] of entities.entries()) {
    const fraction = entity.count / remaining;
    if (index === entities.length - 1) {
      cells.push({ name: entity.name, count: entity.count, x, y, w, h });
      break;
    }
    if (w >= h) {
      const slice = w * fraction;
      cells.push({ name: entity.name, count: entity.count, x, y, w: slice, h });
      x += slice;
      w -= slice;
    } else {
      const slice = h * fraction;
      cells.push({ name: entity.name, count: entity.count, x, y, w, h: slice });
      y += slice;
      h -= slice;
    }
    remaining -= entity.count;
  }
  return cells;
}

export function heatColor(count: number, max: number): string {
  if (max <= 0) return "hsl(210, 30%, 90%)";
  const intensity = Math.min(1, count / max);
  const lightness = 90 - Math.round(intensity * 55);
  return `hsl(210, 80%, ${lightness}%)`;
}

export class LandscapePanel {
  view: LandscapeView | null = null;

  constructor(private api: ApiClient) {}

  /** One /landscape call per (region, sector) selection. */
  async load(region?: string, sector?: string): Promise<LandscapeView> {
    this.view = await this.api.landscape(region, sector);
    return this.view;
  }

  cells(width: number, height: number): TreemapCell[] {
    if (!this.view) return [];
    return treemapLayout(this.view.top_entities, width, height);
  }

  maxBucketCount(): number {
    if (!this.view) return 0;
    return this.view.geo_buckets.reduce((m, b) => Math.max(m, b.count), 0);
  }
}
