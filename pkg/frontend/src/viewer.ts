// three.js render layer: point cloud display, orbit/pan/zoom camera, point
// picking and drag-rectangle / lasso capture. All labeling logic lives in
// AnnotatorState; this class only draws and forwards interactions.

import * as THREE from "three";
import { AnnotatorState } from "./state.js";
import { Palette } from "./palette.js";
import { projectPoints, selectLasso, selectRect, Vec2 } from "./selection.js";

export type Tool = "orbit" | "rect" | "lasso" | "grow";

const SELECTION_TINT = { r: 1.0, g: 0.85, b: 0.1 };

export class Viewer {
  private renderer: THREE.WebGLRenderer;
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private points: THREE.Points | null = null;
  private colorAttr: THREE.BufferAttribute | null = null;
  private raycaster = new THREE.Raycaster();
  private target = new THREE.Vector3();
  private sph = new THREE.Spherical(300, Math.PI / 3, Math.PI / 4);
  tool: Tool = "orbit";
  growRadiusMm = 1.5;
  pointSize = 2.0;
  private dragStart: Vec2 | null = null;
  private lassoPath: Vec2[] = [];
  onToast: ((msg: string) => void) | null = null;

  constructor(
    private canvas: HTMLCanvasElement,
    private state: AnnotatorState,
    private palette: Palette
  ) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(50, 1, 0.1, 5000);
    this.scene.background = new THREE.Color(0x10141a);
    state.onChange = () => this.refreshColors();
    this.bindInput();
    this.resize();
    window.addEventListener("resize", () => this.resize());
    const loop = () => {
      this.updateCamera();
      this.renderer.render(this.scene, this.camera);
      requestAnimationFrame(loop);
    };
    loop();
  }

  resize(): void {
    const w = this.canvas.clientWidth || window.innerWidth;
    const h = this.canvas.clientHeight || window.innerHeight;
    this.renderer.setSize(w, h, false);
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
  }

  rebuildGeometry(): void {
    if (this.points) {
      this.scene.remove(this.points);
      this.points.geometry.dispose();
      (this.points.material as THREE.Material).dispose();
    }
    const n = this.state.pointCount;
    const pos = new Float32Array(n * 3);
    const box = new THREE.Box3();
    for (let i = 0; i < n; i++) {
      pos[3 * i] = this.state.coords[i][0];
      pos[3 * i + 1] = this.state.coords[i][1];
      pos[3 * i + 2] = this.state.coords[i][2];
      box.expandByPoint(new THREE.Vector3(pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]));
    }
    const geom = new THREE.BufferGeometry();
    geom.setAttribute("position", new THREE.BufferAttribute(pos, 3));
    this.colorAttr = new THREE.BufferAttribute(new Float32Array(n * 3), 3);
    geom.setAttribute("color", this.colorAttr);
    const mat = new THREE.PointsMaterial({
      size: this.pointSize,
      vertexColors: true,
      sizeAttenuation: false,
    });
    this.points = new THREE.Points(geom, mat);
    this.scene.add(this.points);
    box.getCenter(this.target);
    this.sph.radius = Math.max(50, box.getSize(new THREE.Vector3()).length() * 1.2);
    this.refreshColors();
  }

  refreshColors(): void {
    if (!this.colorAttr) return;
    const n = this.state.pointCount;
    for (let i = 0; i < n; i++) {
      let c;
      if (this.state.selection.has(i)) {
        c = SELECTION_TINT;
      } else if (this.state.colorMode === "rgb") {
        const [r, g, b] = this.state.colors[i];
        c = { r, g, b };
      } else if (this.state.colorMode === "semantic") {
        c = this.palette.semanticColor(this.state.semantic[i]);
      } else {
        c = this.palette.instanceColor(this.state.semantic[i], this.state.instance[i]);
      }
      this.colorAttr.setXYZ(i, c.r, c.g, c.b);
    }
    this.colorAttr.needsUpdate = true;
  }

  private updateCamera(): void {
    const off = new THREE.Vector3().setFromSpherical(this.sph);
    this.camera.position.copy(this.target).add(off);
    this.camera.lookAt(this.target);
  }

  private ndc(ev: PointerEvent): Vec2 {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: (2 * (ev.clientX - rect.left)) / rect.width - 1,
      y: 1 - (2 * (ev.clientY - rect.top)) / rect.height,
    };
  }

  private viewProj(): number[] {
    this.updateCamera();
    this.camera.updateMatrixWorld();
    const m = new THREE.Matrix4()
      .multiplyMatrices(this.camera.projectionMatrix, this.camera.matrixWorldInverse);
    return m.elements as unknown as number[];
  }

  private projected(): (Vec2 | null)[] {
    const n = this.state.pointCount;
    const flat = new Float32Array(n * 3);
    for (let i = 0; i < n; i++) {
      flat[3 * i] = this.state.coords[i][0];
      flat[3 * i + 1] = this.state.coords[i][1];
      flat[3 * i + 2] = this.state.coords[i][2];
    }
    return projectPoints(flat, this.viewProj());
  }

  private pickIndex(ev: PointerEvent): number | null {
    if (!this.points) return null;
    const p = this.ndc(ev);
    this.raycaster.params.Points = { threshold: 1.5 };
    this.raycaster.setFromCamera(new THREE.Vector2(p.x, p.y), this.camera);
    const hits = this.raycaster.intersectObject(this.points);
    return hits.length ? (hits[0].index ?? null) : null;
  }

  private bindInput(): void {
    let orbiting = false;
    let last: Vec2 = { x: 0, y: 0 };
    this.canvas.addEventListener("pointerdown", (ev) => {
      const p = this.ndc(ev);
      if (this.tool === "orbit" || ev.button === 1 || ev.shiftKey) {
        orbiting = true;
        last = { x: ev.clientX, y: ev.clientY };
      } else if (this.tool === "rect") {
        this.dragStart = p;
      } else if (this.tool === "lasso") {
        this.lassoPath = [p];
      } else if (this.tool === "grow") {
        const idx = this.pickIndex(ev);
        if (idx !== null) {
          this.state
            .regionGrow(idx, this.growRadiusMm)
            .catch((e) => this.onToast?.(`region grow failed: ${e}`));
        }
      }
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (orbiting) {
        const dx = ev.clientX - last.x;
        const dy = ev.clientY - last.y;
        last = { x: ev.clientX, y: ev.clientY };
        if (ev.buttons & 4 || ev.ctrlKey) {
          // pan in the view plane
          const scale = this.sph.radius * 0.002;
          const right = new THREE.Vector3(1, 0, 0).applyQuaternion(this.camera.quaternion);
          const up = new THREE.Vector3(0, 1, 0).applyQuaternion(this.camera.quaternion);
          this.target.addScaledVector(right, -dx * scale);
          this.target.addScaledVector(up, dy * scale);
        } else {
          this.sph.theta -= dx * 0.005;
          this.sph.phi = Math.min(Math.PI - 0.05, Math.max(0.05, this.sph.phi - dy * 0.005));
        }
      } else if (this.tool === "lasso" && this.lassoPath.length) {
        this.lassoPath.push(this.ndc(ev));
      }
    });
    this.canvas.addEventListener("pointerup", (ev) => {
      if (orbiting) {
        orbiting = false;
        return;
      }
      if (this.tool === "rect" && this.dragStart) {
        const sel = selectRect(this.projected(), this.dragStart, this.ndc(ev));
        ev.altKey ? this.state.addToSelection(sel) : this.state.setSelection(sel);
        this.dragStart = null;
      } else if (this.tool === "lasso" && this.lassoPath.length > 2) {
        const sel = selectLasso(this.projected(), this.lassoPath);
        ev.altKey ? this.state.addToSelection(sel) : this.state.setSelection(sel);
        this.lassoPath = [];
      }
    });
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.sph.radius *= ev.deltaY > 0 ? 1.1 : 0.9;
    });
  }
}
