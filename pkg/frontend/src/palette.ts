import type { SchemaEntry } from "./api.js";

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

export function hexToRgb(hex: string): Rgb {
  const v = parseInt(hex.replace("#", ""), 16);
  return { r: ((v >> 16) & 255) / 255, g: ((v >> 8) & 255) / 255, b: (v & 255) / 255 };
}

const UNLABELED: Rgb = { r: 0.55, g: 0.55, b: 0.55 };

export class Palette {
  private bySemInst = new Map<string, Rgb>();
  readonly entries: SchemaEntry[];

  constructor(entries: SchemaEntry[]) {
    this.entries = entries;
    for (const e of entries) {
      this.bySemInst.set(`${e.semantic}:${e.instance}`, hexToRgb(e.color));
    }
  }

  /** Color for a label pair in semantic mode: one color per class. */
  semanticColor(sem: number): Rgb {
    if (sem < 0) return UNLABELED;
    if (sem === 0) return this.bySemInst.get("0:-1") ?? UNLABELED;
    // all leaves share the first leaf hue in semantic mode
    return this.bySemInst.get("1:0") ?? UNLABELED;
  }

  instanceColor(sem: number, inst: number): Rgb {
    if (sem < 0) return UNLABELED;
    if (inst < 0) return this.semanticColor(sem);
    const key = `1:${inst % 69}`;
    return this.bySemInst.get(key) ?? UNLABELED;
  }

  labelFor(name: string): SchemaEntry | undefined {
    return this.entries.find((e) => e.name === name);
  }

  /** The palette entry after `name`, wrapping; used for keyboard cycling. */
  next(name: string): SchemaEntry {
    const idx = this.entries.findIndex((e) => e.name === name);
    return this.entries[(idx + 1) % this.entries.length];
  }
}
