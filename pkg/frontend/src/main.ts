// Bootstrap: cloud list, toolbar, keyboard palette cycling, save/export.

import { ApiClient } from "./api.js";
import { Palette } from "./palette.js";
import { AnnotatorState } from "./state.js";
import { Tool, Viewer } from "./viewer.js";

const api = new ApiClient("");
const state = new AnnotatorState(api);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function toast(msg: string, sticky = false): void {
  const box = el<HTMLDivElement>("toasts");
  const item = document.createElement("div");
  item.className = "toast";
  item.textContent = msg;
  box.appendChild(item);
  if (!sticky) setTimeout(() => item.remove(), 4000);
}

async function start(): Promise<void> {
  const schema = await api.schema();
  const palette = new Palette(schema);
  const viewer = new Viewer(el<HTMLCanvasElement>("viewer"), state, palette);
  viewer.onToast = toast;

  const cloudSel = el<HTMLSelectElement>("cloud-select");
  for (const c of await api.listClouds()) {
    const opt = document.createElement("option");
    opt.value = c.id;
    opt.textContent = `${c.id} (${c.points} pts${c.labeled ? ", labeled" : ""})`;
    cloudSel.appendChild(opt);
  }

  const labelSel = el<HTMLSelectElement>("label-select");
  for (const entry of schema) {
    const opt = document.createElement("option");
    opt.value = entry.name;
    opt.textContent = entry.name;
    opt.style.color = entry.color;
    labelSel.appendChild(opt);
  }
  labelSel.onchange = () => {
    const entry = palette.labelFor(labelSel.value);
    if (entry) state.activeLabel = { sem: entry.semantic, inst: entry.instance };
  };

  const loadCloud = async () => {
    await state.load(cloudSel.value);
    viewer.rebuildGeometry();
    toast(`loaded ${state.cloudId}: ${state.pointCount} displayed points`);
  };
  cloudSel.onchange = loadCloud;

  for (const tool of ["orbit", "rect", "lasso", "grow"] as Tool[]) {
    el<HTMLButtonElement>(`tool-${tool}`).onclick = () => {
      viewer.tool = tool;
      document.querySelectorAll(".tool").forEach((b) => b.classList.remove("active"));
      el(`tool-${tool}`).classList.add("active");
    };
  }

  (el<HTMLSelectElement>("color-mode") as HTMLSelectElement).onchange = (ev) => {
    state.colorMode = (ev.target as HTMLSelectElement).value as typeof state.colorMode;
    viewer.refreshColors();
  };

  el<HTMLButtonElement>("assign").onclick = () => state.assign();
  el<HTMLButtonElement>("new-leaf").onclick = () => {
    const pair = state.newLeaf();
    const name = `leaf_${String(pair.inst + 1).padStart(2, "0")}`;
    labelSel.value = name;
    toast(`active label: ${name}`);
  };
  el<HTMLButtonElement>("undo").onclick = () => state.undo();
  el<HTMLButtonElement>("redo").onclick = () => state.redo();
  el<HTMLButtonElement>("clear-sel").onclick = () => state.clearSelection();

  el<HTMLButtonElement>("save").onclick = async () => {
    const ok = await state.save();
    if (ok) {
      toast(`saved, revision ${state.revision}`);
    } else {
      toast(state.conflict ?? "save conflict", true);
      el<HTMLButtonElement>("resolve").hidden = false;
    }
  };
  el<HTMLButtonElement>("resolve").onclick = async () => {
    const ok = await state.reloadAndReapply();
    viewer.rebuildGeometry();
    toast(ok ? "conflict resolved, edits reapplied" : "still conflicting, try again");
    if (ok) el<HTMLButtonElement>("resolve").hidden = true;
  };

  el<HTMLButtonElement>("export").onclick = async () => {
    const text = await state.exportText();
    const blob = new Blob([text], { type: "text/plain" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = `${state.cloudId}.xyzl`;
    a.click();
  };

  window.addEventListener("keydown", (ev) => {
    if (ev.key === "a") state.assign();
    if (ev.key === "n") el<HTMLButtonElement>("new-leaf").click();
    if (ev.key === "z" && (ev.ctrlKey || ev.metaKey)) state.undo();
    if (ev.key === "y" && (ev.ctrlKey || ev.metaKey)) state.redo();
    if (ev.key === "Tab") {
      ev.preventDefault();
      const entry = palette.next(labelSel.value);
      labelSel.value = entry.name;
      state.activeLabel = { sem: entry.semantic, inst: entry.instance };
      toast(`active label: ${entry.name}`);
    }
  });

  if (cloudSel.options.length) {
    cloudSel.selectedIndex = 0;
    await loadCloud();
  }
}

start().catch((err) => {
  document.body.innerHTML = `<pre style="color:#f66">${err}</pre>`;
});
