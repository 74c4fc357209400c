// Annotator session state: labels, selection, undo/redo, optimistic saves.
//
// The state tracks the displayed (possibly decimated) points; label edits are
// keyed by original cloud indices through the server-provided index map. A
// save sends only the diff against the last synchronized labels; a stale
// revision surfaces as a conflict the UI must resolve (reload and reapply)
// rather than silently overwriting someone else's work.

import { ApiClient, CloudPayload, LabelEdit, StaleRevisionError } from "./api.js";

export interface LabelPair {
  sem: number;
  inst: number;
}

interface UndoBatch {
  displayed: number[];
  prevSem: Int32Array;
  prevInst: Int32Array;
}

export type ColorMode = "rgb" | "semantic" | "instance";

export const UNDO_LIMIT = 100;

export class AnnotatorState {
  cloudId = "";
  revision = 0;
  coords: number[][] = [];
  colors: number[][] = [];
  indexMap: number[] = [];
  semantic: Int32Array = new Int32Array(0);
  instance: Int32Array = new Int32Array(0);
  /** labels as of the last successful sync with the server */
  private syncedSemantic: Int32Array = new Int32Array(0);
  private syncedInstance: Int32Array = new Int32Array(0);

  selection: Set<number> = new Set();
  activeLabel: LabelPair = { sem: 0, inst: -1 };
  colorMode: ColorMode = "rgb";
  nextLeafInstance = 0;

  private undoStack: UndoBatch[] = [];
  private redoStack: UndoBatch[] = [];
  conflict: string | null = null;
  onChange: (() => void) | null = null;

  constructor(private api: ApiClient) {}

  get pointCount(): number {
    return this.indexMap.length;
  }

  async load(cloudId: string, budget?: number): Promise<void> {
    const payload = await this.api.cloud(cloudId, budget);
    this.adopt(payload);
  }

  private adopt(payload: CloudPayload): void {
    this.cloudId = payload.id;
    this.revision = payload.revision;
    this.coords = payload.coords;
    this.colors = payload.colors;
    this.indexMap = payload.index_map;
    this.semantic = Int32Array.from(payload.semantic);
    this.instance = Int32Array.from(payload.instance);
    this.syncedSemantic = Int32Array.from(payload.semantic);
    this.syncedInstance = Int32Array.from(payload.instance);
    this.selection.clear();
    this.undoStack = [];
    this.redoStack = [];
    this.conflict = null;
    const used = Array.from(this.instance).filter((v) => v >= 0);
    this.nextLeafInstance = used.length ? Math.max(...used) + 1 : 0;
    this.notify();
  }

  private notify(): void {
    if (this.onChange) this.onChange();
  }

  // selection -----------------------------------------------------------

  setSelection(displayedIndices: Iterable<number>): void {
    this.selection = new Set(displayedIndices);
    this.notify();
  }

  addToSelection(displayedIndices: Iterable<number>): void {
    for (const i of displayedIndices) this.selection.add(i);
    this.notify();
  }

  clearSelection(): void {
    this.selection.clear();
    this.notify();
  }

  selectAll(): void {
    this.setSelection(Array.from({ length: this.pointCount }, (_, i) => i));
  }

  /** Map original cloud indices (e.g. a /region response) onto displayed ones. */
  selectOriginalIndices(originalIndices: number[]): void {
    const wanted = new Set(originalIndices);
    const displayed: number[] = [];
    this.indexMap.forEach((orig, disp) => {
      if (wanted.has(orig)) displayed.push(disp);
    });
    this.setSelection(displayed);
  }

  async regionGrow(seedDisplayed: number, radiusMm: number, maxPoints = 100000): Promise<number[]> {
    const seedOriginal = this.indexMap[seedDisplayed];
    const indices = await this.api.regionGrow(this.cloudId, seedOriginal, radiusMm, maxPoints);
    this.selectOriginalIndices(indices);
    return indices;
  }

  // labeling ------------------------------------------------------------

  /** Assign the active label to the selection (undoable). */
  assign(label?: LabelPair): void {
    if (this.selection.size === 0) return;
    const pair = label ?? this.activeLabel;
    const displayed = Array.from(this.selection).sort((a, b) => a - b);
    const batch: UndoBatch = {
      displayed,
      prevSem: Int32Array.from(displayed, (i) => this.semantic[i]),
      prevInst: Int32Array.from(displayed, (i) => this.instance[i]),
    };
    for (const i of displayed) {
      this.semantic[i] = pair.sem;
      this.instance[i] = pair.inst;
    }
    this.undoStack.push(batch);
    if (this.undoStack.length > UNDO_LIMIT) this.undoStack.shift();
    this.redoStack = [];
    this.notify();
  }

  /** Start a fresh leaf instance and make it the active label. */
  newLeaf(): LabelPair {
    this.activeLabel = { sem: 1, inst: this.nextLeafInstance };
    this.nextLeafInstance += 1;
    return this.activeLabel;
  }

  undo(): boolean {
    const batch = this.undoStack.pop();
    if (!batch) return false;
    const redo: UndoBatch = {
      displayed: batch.displayed,
      prevSem: Int32Array.from(batch.displayed, (i) => this.semantic[i]),
      prevInst: Int32Array.from(batch.displayed, (i) => this.instance[i]),
    };
    batch.displayed.forEach((i, k) => {
      this.semantic[i] = batch.prevSem[k];
      this.instance[i] = batch.prevInst[k];
    });
    this.redoStack.push(redo);
    this.notify();
    return true;
  }

  redo(): boolean {
    const batch = this.redoStack.pop();
    if (!batch) return false;
    const undo: UndoBatch = {
      displayed: batch.displayed,
      prevSem: Int32Array.from(batch.displayed, (i) => this.semantic[i]),
      prevInst: Int32Array.from(batch.displayed, (i) => this.instance[i]),
    };
    batch.displayed.forEach((i, k) => {
      this.semantic[i] = batch.prevSem[k];
      this.instance[i] = batch.prevInst[k];
    });
    this.undoStack.push(undo);
    this.notify();
    return true;
  }

  // persistence -----------------------------------------------------------

  pendingEdits(): LabelEdit[] {
    const edits: LabelEdit[] = [];
    for (let i = 0; i < this.pointCount; i++) {
      if (
        this.semantic[i] !== this.syncedSemantic[i] ||
        this.instance[i] !== this.syncedInstance[i]
      ) {
        edits.push({ index: this.indexMap[i], sem: this.semantic[i], inst: this.instance[i] });
      }
    }
    return edits;
  }

  get dirty(): boolean {
    return this.pendingEdits().length > 0;
  }

  async save(): Promise<boolean> {
    const edits = this.pendingEdits();
    if (edits.length === 0) return true;
    try {
      this.revision = await this.api.saveLabels(this.cloudId, this.revision, edits);
      this.syncedSemantic = Int32Array.from(this.semantic);
      this.syncedInstance = Int32Array.from(this.instance);
      this.conflict = null;
      this.notify();
      return true;
    } catch (err) {
      if (err instanceof StaleRevisionError) {
        this.conflict = "label revision changed on the server; reload and reapply";
        this.notify();
        return false;
      }
      throw err;
    }
  }

  /** Conflict recovery: fetch the server state, replay local edits, save. */
  async reloadAndReapply(): Promise<boolean> {
    const local = this.pendingEdits();
    const payload = await this.api.cloud(this.cloudId);
    this.adopt(payload);
    const byOriginal = new Map(this.indexMap.map((orig, disp) => [orig, disp]));
    const displayed: number[] = [];
    for (const edit of local) {
      const disp = byOriginal.get(edit.index);
      if (disp === undefined) continue;
      this.semantic[disp] = edit.sem;
      this.instance[disp] = edit.inst;
      displayed.push(disp);
    }
    this.notify();
    return this.save();
  }

  async exportText(): Promise<string> {
    return this.api.exportCloud(this.cloudId);
  }
}
