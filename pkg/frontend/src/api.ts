// Typed client for the labeling service HTTP API.

export interface CloudSummary {
  id: string;
  points: number;
  labeled: boolean;
}

export interface CloudPayload {
  id: string;
  revision: number;
  coords: number[][];
  colors: number[][];
  index_map: number[];
  semantic: number[];
  instance: number[];
}

export interface LabelEdit {
  index: number; // original cloud index
  sem: number;
  inst: number;
}

export interface SchemaEntry {
  name: string;
  semantic: number;
  instance: number;
  color: string;
}

export class StaleRevisionError extends Error {
  constructor(public current: string) {
    super(`stale revision: ${current}`);
  }
}

export class ApiClient {
  constructor(private base: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) throw new Error(`GET ${path} -> ${resp.status}`);
    return (await resp.json()) as T;
  }

  listClouds(): Promise<CloudSummary[]> {
    return this.getJson("/api/clouds");
  }

  schema(): Promise<SchemaEntry[]> {
    return this.getJson("/api/schema");
  }

  cloud(id: string, budget?: number): Promise<CloudPayload> {
    const q = budget ? `?budget=${budget}` : "";
    return this.getJson(`/api/clouds/${id}${q}`);
  }

  async saveLabels(id: string, revision: number, edits: LabelEdit[]): Promise<number> {
    const resp = await fetch(`${this.base}/api/clouds/${id}/labels`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ revision, edits }),
    });
    if (resp.status === 409) {
      throw new StaleRevisionError(await resp.text());
    }
    if (!resp.ok) throw new Error(`POST labels -> ${resp.status}`);
    const doc = (await resp.json()) as { revision: number };
    return doc.revision;
  }

  async regionGrow(id: string, seedIndex: number, radiusMm: number, maxPoints = 100000): Promise<number[]> {
    const resp = await fetch(`${this.base}/api/clouds/${id}/region`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ seed_index: seedIndex, radius_mm: radiusMm, max_points: maxPoints }),
    });
    if (!resp.ok) throw new Error(`POST region -> ${resp.status}`);
    const doc = (await resp.json()) as { indices: number[] };
    return doc.indices;
  }

  async exportCloud(id: string): Promise<string> {
    const resp = await fetch(`${this.base}/api/clouds/${id}/export`);
    if (!resp.ok) throw new Error(`GET export -> ${resp.status}`);
    return await resp.text();
  }
}
