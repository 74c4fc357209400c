import { beforeEach, describe, expect, it } from "vitest";
import { ApiClient, CloudPayload, LabelEdit, StaleRevisionError } from "../src/api.js";
import { AnnotatorState, UNDO_LIMIT } from "../src/state.js";

/** In-memory stand-in implementing the service's revision semantics. */
class MockApi extends ApiClient {
  revision = 0;
  sem: number[];
  inst: number[];
  posted: LabelEdit[][] = [];
  regions = new Map<string, number[]>();

  constructor(public n: number) {
    super("");
    this.sem = Array(n).fill(-1);
    this.inst = Array(n).fill(-1);
  }

  payload(): CloudPayload {
    return {
      id: "mock",
      revision: this.revision,
      coords: Array.from({ length: this.n }, (_, i) => [i, 0, 0]),
      colors: Array.from({ length: this.n }, () => [0.5, 0.5, 0.5]),
      index_map: Array.from({ length: this.n }, (_, i) => i),
      semantic: [...this.sem],
      instance: [...this.inst],
    };
  }

  override async cloud(): Promise<CloudPayload> {
    return this.payload();
  }

  override async saveLabels(_id: string, revision: number, edits: LabelEdit[]): Promise<number> {
    if (revision !== this.revision) throw new StaleRevisionError(String(this.revision));
    this.posted.push(edits);
    for (const e of edits) {
      this.sem[e.index] = e.sem;
      this.inst[e.index] = e.inst;
    }
    this.revision += 1;
    return this.revision;
  }

  override async regionGrow(_id: string, seed: number, radius: number): Promise<number[]> {
    return this.regions.get(`${seed}:${radius}`) ?? [seed];
  }
}

describe("AnnotatorState", () => {
  let api: MockApi;
  let state: AnnotatorState;

  beforeEach(async () => {
    api = new MockApi(10);
    state = new AnnotatorState(api);
    await state.load("mock");
  });

  it("assigns the active label to the selection", () => {
    state.activeLabel = { sem: 1, inst: 2 };
    state.setSelection([1, 3, 5]);
    state.assign();
    expect(Array.from(state.semantic)).toEqual([-1, 1, -1, 1, -1, 1, -1, -1, -1, -1]);
    expect(state.instance[3]).toBe(2);
  });

  it("undo/redo round-trip is identity on the label state", () => {
    const before = { sem: Array.from(state.semantic), inst: Array.from(state.instance) };
    state.setSelection([0, 1]);
    state.assign({ sem: 0, inst: -1 });
    state.setSelection([2]);
    state.assign({ sem: 1, inst: 4 });
    const after = { sem: Array.from(state.semantic), inst: Array.from(state.instance) };
    state.undo();
    state.undo();
    expect(Array.from(state.semantic)).toEqual(before.sem);
    expect(Array.from(state.instance)).toEqual(before.inst);
    state.redo();
    state.redo();
    expect(Array.from(state.semantic)).toEqual(after.sem);
    expect(Array.from(state.instance)).toEqual(after.inst);
  });

  it("bounds the undo stack", () => {
    for (let i = 0; i < UNDO_LIMIT + 20; i++) {
      state.setSelection([i % 10]);
      state.assign({ sem: 1, inst: i });
    }
    let undone = 0;
    while (state.undo()) undone++;
    expect(undone).toBe(UNDO_LIMIT);
  });

  it("saves only the diff against the synced labels", async () => {
    state.setSelection([4]);
    state.assign({ sem: 1, inst: 0 });
    expect(state.dirty).toBe(true);
    await state.save();
    expect(api.posted[0]).toEqual([{ index: 4, sem: 1, inst: 0 }]);
    expect(state.dirty).toBe(false);
    // a second save with no further edits transmits nothing
    await state.save();
    expect(api.posted.length).toBe(1);
  });

  it("surfaces a conflict on stale revision and reapplies after reload", async () => {
    state.setSelection([2]);
    state.assign({ sem: 0, inst: -1 });
    // another writer bumps the server revision first
    api.sem[7] = 1;
    api.inst[7] = 3;
    api.revision += 1;
    const ok = await state.save();
    expect(ok).toBe(false);
    expect(state.conflict).toBeTruthy();
    const resolved = await state.reloadAndReapply();
    expect(resolved).toBe(true);
    expect(api.sem[2]).toBe(0);
    expect(api.sem[7]).toBe(1); // the other writer's edit survived
    expect(state.conflict).toBeNull();
  });

  it("new leaf auto-increments the instance id", () => {
    expect(state.newLeaf()).toEqual({ sem: 1, inst: 0 });
    expect(state.newLeaf()).toEqual({ sem: 1, inst: 1 });
    state.setSelection([0]);
    state.assign();
    expect(state.instance[0]).toBe(1);
  });

  it("region grow maps original indices onto the displayed selection", async () => {
    api.regions.set("5:1.5", [5, 6, 7]);
    const got = await state.regionGrow(5, 1.5);
    expect(got).toEqual([5, 6, 7]);
    expect(Array.from(state.selection).sort()).toEqual([5, 6, 7]);
  });

  it("select all covers every displayed point", () => {
    state.selectAll();
    expect(state.selection.size).toBe(10);
  });
});
