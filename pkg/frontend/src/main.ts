/**
 * UI wiring: load a bundle, orbit the camera, pick and pose bones with
 * gizmo drags or sliders, undo, capture keyframes, export the pose file.
 */

import { BundleError, BundleSidecar, LoadedModel, parseBundle } from './bundle.js';
import { OrbitState, orbitBasis } from './camera.js';
import { GOLDEN_BONES, goldenKeyframes } from './golden_pose.js';
import { applyPose } from './lbs.js';
import {
  Quat,
  Vec3,
  quatFromAxisAngle,
  quatMultiply,
  quatNormalize,
} from './math.js';
import { exportPose, Keyframe, PoseEditor, clonePose } from './pose.js';
import { SplatRenderer } from './renderer.js';

type DragMode = 'orbit' | 'rotate-bone' | 'translate-bone' | null;

const canvas = document.getElementById('view') as HTMLCanvasElement;
const banner = document.getElementById('banner') as HTMLDivElement;
const hud = document.getElementById('hud') as HTMLDivElement;
const boneList = document.getElementById('bones') as HTMLSelectElement;
const fileInput = document.getElementById('file') as HTMLInputElement;

let renderer: SplatRenderer;
try {
  renderer = new SplatRenderer(canvas);
} catch (err) {
  showBanner(String(err instanceof Error ? err.message : err));
  throw err;
}
renderer.onContextLost = () =>
  showBanner('Graphics context lost. Reload the page to continue.');

let model: LoadedModel | null = null;
let editor = new PoseEditor(0);
let keyframes: Keyframe[] = [];
let orbit: OrbitState = {
  target: [0, 0, 0],
  radius: 2.5,
  azimuthDeg: 30,
  elevationDeg: 15,
  fovDeg: 45,
};
let drag: { mode: DragMode; lastX: number; lastY: number } = {
  mode: null,
  lastX: 0,
  lastY: 0,
};
let needsSkin = false;
let needsResort = false;
let needsDraw = false;
let poseChangedAt = 0;
let lastLatency = 0;

function showBanner(message: string): void {
  banner.textContent = message;
  banner.style.display = 'block';
}

function clearBanner(): void {
  banner.style.display = 'none';
}

function markPoseChanged(resort: boolean): void {
  needsSkin = true;
  needsResort ||= resort;
  needsDraw = true;
  poseChangedAt = performance.now();
}

function markViewChanged(resort: boolean): void {
  needsResort ||= resort;
  needsDraw = true;
}

// -- model loading --------------------------------------------------------------

async function loadFiles(files: FileList | File[]): Promise<void> {
  const list = Array.from(files);
  const binary = list.find((f) => f.name.endsWith('.bundle'));
  const sidecarFile = list.find((f) => f.name.endsWith('.bundle.json'));
  if (!binary) {
    showBanner('Select a .bundle file (its .bundle.json sidecar is optional).');
    return;
  }
  try {
    const started = performance.now();
    const parsed = parseBundle(await binary.arrayBuffer());
    const loadMs = performance.now() - started;
    let sidecar: Partial<BundleSidecar> = {};
    if (sidecarFile) {
      sidecar = JSON.parse(await sidecarFile.text());
    }
    installModel(parsed, sidecar, binary.name, loadMs);
    clearBanner();
  } catch (err) {
    if (err instanceof BundleError) {
      showBanner(`Could not load ${binary.name}: ${err.message}`);
    } else {
      showBanner(`Unexpected failure loading ${binary.name}: ${err}`);
    }
  }
}

function installModel(
  parsed: LoadedModel,
  sidecar: Partial<BundleSidecar>,
  name: string,
  loadMs: number,
): void {
  model = parsed;
  editor = new PoseEditor(parsed.bones);
  keyframes = [];
  renderer.setModel(parsed);
  renderer.background = (sidecar.background as [number, number, number]) ?? [0, 0, 0];
  const extent = sidecar.scene_extent ?? extentFromPositions(parsed.positions);
  orbit = { ...orbit, target: [0, 0, 0], radius: Math.max(2.5 * extent, 0.1) };
  boneList.innerHTML = '';
  for (let k = 0; k < parsed.bones; k++) {
    const opt = document.createElement('option');
    opt.value = String(k);
    opt.textContent = `bone ${k}`;
    boneList.appendChild(opt);
  }
  boneList.value = '0';
  (document.getElementById('demo') as HTMLButtonElement).disabled =
    parsed.bones !== GOLDEN_BONES;
  refreshSliders();
  markPoseChanged(true);
  setHud(`${name}: ${parsed.splats} splats, ${parsed.bones} bones, parsed in ${loadMs.toFixed(0)} ms`);
}

function extentFromPositions(positions: Float32Array): number {
  let worst = 0;
  for (let i = 0; i < positions.length; i += 3) {
    worst = Math.max(
      worst,
      Math.hypot(positions[i], positions[i + 1], positions[i + 2]),
    );
  }
  return worst || 1;
}

// -- pose controls ----------------------------------------------------------------

const sliderIds = ['rx', 'ry', 'rz', 'tx', 'ty', 'tz'] as const;

function slider(id: string): HTMLInputElement {
  return document.getElementById(id) as HTMLInputElement;
}

function selectedBone(): number {
  return Number(boneList.value || 0);
}

function refreshSliders(): void {
  if (!model || model.bones === 0) return;
  const bone = editor.state.bones[selectedBone()];
  const [rx, ry, rz] = eulerFromQuat(bone.rotation);
  slider('rx').value = String(rx);
  slider('ry').value = String(ry);
  slider('rz').value = String(rz);
  slider('tx').value = String(bone.translation[0]);
  slider('ty').value = String(bone.translation[1]);
  slider('tz').value = String(bone.translation[2]);
}

/** z-y-x intrinsic angles in degrees; display only, drags keep the quat. */
function eulerFromQuat(q: Quat): [number, number, number] {
  const [w, x, y, z] = quatNormalize(q);
  const sinp = 2 * (w * y - z * x);
  return [
    (Math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y)) * 180) / Math.PI,
    (Math.asin(Math.max(-1, Math.min(1, sinp))) * 180) / Math.PI,
    (Math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z)) * 180) / Math.PI,
  ];
}

function quatFromSliders(): Quat {
  const rx = (Number(slider('rx').value) * Math.PI) / 180;
  const ry = (Number(slider('ry').value) * Math.PI) / 180;
  const rz = (Number(slider('rz').value) * Math.PI) / 180;
  return quatMultiply(
    quatFromAxisAngle([0, 0, 1], rz),
    quatMultiply(quatFromAxisAngle([0, 1, 0], ry), quatFromAxisAngle([1, 0, 0], rx)),
  );
}

let sliderGestureActive = false;

for (const id of sliderIds) {
  const el = slider(id);
  el.addEventListener('pointerdown', () => {
    if (!sliderGestureActive) {
      editor.checkpoint();
      sliderGestureActive = true;
    }
  });
  el.addEventListener('input', () => {
    if (!model) return;
    const bone = selectedBone();
    editor.setRotation(bone, quatFromSliders());
    editor.setTranslation(bone, [
      Number(slider('tx').value),
      Number(slider('ty').value),
      Number(slider('tz').value),
    ]);
    markPoseChanged(false); // stale sort while scrubbing
  });
  el.addEventListener('change', () => {
    sliderGestureActive = false;
    markPoseChanged(true); // full resort at gesture end
  });
}

boneList.addEventListener('change', () => {
  editor.state.selected = selectedBone();
  refreshSliders();
  markViewChanged(false);
});

document.getElementById('undo')!.addEventListener('click', () => {
  if (editor.undo()) {
    refreshSliders();
    markPoseChanged(true);
  }
});

document.addEventListener('keydown', (ev) => {
  if ((ev.ctrlKey || ev.metaKey) && ev.key === 'z') {
    ev.preventDefault();
    if (editor.undo()) {
      refreshSliders();
      markPoseChanged(true);
    }
  }
});

document.getElementById('reset')!.addEventListener('click', () => {
  if (!model) return;
  editor.reset();
  refreshSliders();
  markPoseChanged(true);
});

document.getElementById('demo')!.addEventListener('click', () => {
  if (!model || model.bones !== GOLDEN_BONES) return;
  editor.checkpoint();
  const demo = goldenKeyframes()[1];
  demo.bones.forEach((b, k) => {
    editor.setRotation(k, b.rotation);
    editor.setTranslation(k, b.translation);
  });
  refreshSliders();
  markPoseChanged(true);
});

// -- keyframes and export -------------------------------------------------------

document.getElementById('capture')!.addEventListener('click', () => {
  if (!model) return;
  keyframes.push({ time: keyframes.length, bones: clonePose(editor.state).bones });
  setHud(`${keyframes.length} keyframe(s) captured`);
});

document.getElementById('export')!.addEventListener('click', () => {
  if (keyframes.length === 0) {
    showBanner('Capture at least one keyframe before exporting.');
    return;
  }
  const blob = new Blob([exportPose(keyframes)], { type: 'application/json' });
  const a = document.createElement('a');
  a.href = URL.createObjectURL(blob);
  a.download = 'pose.json';
  a.click();
  URL.revokeObjectURL(a.href);
});

// -- input: file pickers and drag-drop --------------------------------------------

fileInput.addEventListener('change', () => {
  if (fileInput.files?.length) void loadFiles(fileInput.files);
});
canvas.addEventListener('dragover', (ev) => ev.preventDefault());
canvas.addEventListener('drop', (ev) => {
  ev.preventDefault();
  if (ev.dataTransfer?.files.length) void loadFiles(ev.dataTransfer.files);
});

// -- input: camera orbit and bone drags -------------------------------------------

function pickBone(clientX: number, clientY: number): number | null {
  if (!model || model.bones === 0) return null;
  const rect = canvas.getBoundingClientRect();
  const px = ((clientX - rect.left) / rect.width) * canvas.width;
  const py = ((clientY - rect.top) / rect.height) * canvas.height;
  const basis = orbitBasis(orbit);
  const fovRad = (orbit.fovDeg * Math.PI) / 180;
  const fy = (0.5 * canvas.height) / Math.tan(fovRad / 2);
  let best: number | null = null;
  let bestDist = 30; // pixels
  for (let k = 0; k < model.bones; k++) {
    const posed = posedBoneCenter(k);
    const wx = posed[0] - basis.position[0];
    const wy = posed[1] - basis.position[1];
    const wz = posed[2] - basis.position[2];
    const cx = basis.right[0] * wx + basis.right[1] * wy + basis.right[2] * wz;
    const cy = basis.up[0] * wx + basis.up[1] * wy + basis.up[2] * wz;
    const cz = basis.forward[0] * wx + basis.forward[1] * wy + basis.forward[2] * wz;
    if (cz <= 0) continue;
    const sx = canvas.width / 2 + (fy * cx) / cz;
    const sy = canvas.height / 2 - (fy * cy) / cz;
    const dist = Math.hypot(sx - px, sy - py);
    if (dist < bestDist) {
      best = k;
      bestDist = dist;
    }
  }
  return best;
}

function posedBoneCenter(k: number): Vec3 {
  const c: Vec3 = [
    model!.boneCenters[3 * k],
    model!.boneCenters[3 * k + 1],
    model!.boneCenters[3 * k + 2],
  ];
  const t = editor.state.bones[k].translation;
  return [c[0] + t[0], c[1] + t[1], c[2] + t[2]];
}

canvas.addEventListener('pointerdown', (ev) => {
  canvas.setPointerCapture(ev.pointerId);
  const hit = pickBone(ev.clientX, ev.clientY);
  if (hit !== null) {
    boneList.value = String(hit);
    editor.state.selected = hit;
    refreshSliders();
    editor.checkpoint();
    drag = { mode: ev.shiftKey ? 'translate-bone' : 'rotate-bone', lastX: ev.clientX, lastY: ev.clientY };
  } else {
    drag = { mode: 'orbit', lastX: ev.clientX, lastY: ev.clientY };
  }
});

canvas.addEventListener('pointermove', (ev) => {
  if (!drag.mode) return;
  const dx = ev.clientX - drag.lastX;
  const dy = ev.clientY - drag.lastY;
  drag.lastX = ev.clientX;
  drag.lastY = ev.clientY;
  if (drag.mode === 'orbit') {
    orbit = {
      ...orbit,
      azimuthDeg: orbit.azimuthDeg - 0.4 * dx,
      elevationDeg: Math.max(-89, Math.min(89, orbit.elevationDeg + 0.3 * dy)),
    };
    markViewChanged(false); // stale order mid-drag
    return;
  }
  if (!model) return;
  const bone = selectedBone();
  const basis = orbitBasis(orbit);
  if (drag.mode === 'rotate-bone') {
    // trackball: horizontal drag spins about the camera's up axis,
    // vertical about its right axis
    const spin = quatMultiply(
      quatFromAxisAngle(basis.up, -dx * 0.01),
      quatFromAxisAngle(basis.right, -dy * 0.01),
    );
    editor.setRotation(bone, quatMultiply(spin, editor.state.bones[bone].rotation));
  } else {
    // shift+drag slides the bone in the camera plane, scaled so a
    // full-canvas drag covers roughly the orbit radius
    const step = 0.002 * orbit.radius;
    const t = editor.state.bones[bone].translation;
    editor.setTranslation(bone, [
      t[0] + step * (dx * basis.right[0] - dy * basis.up[0]),
      t[1] + step * (dx * basis.right[1] - dy * basis.up[1]),
      t[2] + step * (dx * basis.right[2] - dy * basis.up[2]),
    ]);
  }
  refreshSliders();
  markPoseChanged(false);
});

canvas.addEventListener('pointerup', (ev) => {
  canvas.releasePointerCapture(ev.pointerId);
  if (drag.mode === 'rotate-bone' || drag.mode === 'translate-bone') {
    markPoseChanged(true); // commit: full resort
  } else if (drag.mode === 'orbit') {
    markViewChanged(true);
  }
  drag = { mode: null, lastX: 0, lastY: 0 };
});

canvas.addEventListener('wheel', (ev) => {
  ev.preventDefault();
  orbit = { ...orbit, radius: orbit.radius * Math.exp(0.001 * ev.deltaY) };
  markViewChanged(true);
});

// -- frame loop --------------------------------------------------------------------

function setHud(extra: string): void {
  const latency = lastLatency > 0 ? `pose latency ${lastLatency.toFixed(1)} ms` : '';
  hud.textContent = [extra, latency].filter(Boolean).join(' | ');
}

function frame(): void {
  requestAnimationFrame(frame);
  if (!needsDraw) return;
  needsDraw = false;
  const resort = needsResort;
  needsResort = false;
  if (model && needsSkin) {
    needsSkin = false;
    renderer.setWarped(applyPose(model, editor.state.bones));
  }
  renderer.draw(orbit, model ? editor.state.bones : null, editor.state.selected, resort);
  if (poseChangedAt > 0) {
    lastLatency = performance.now() - poseChangedAt;
    poseChangedAt = 0;
    setHud(model ? `${model.splats} splats, ${model.bones} bones` : '');
  }
}

function resize(): void {
  const rect = canvas.getBoundingClientRect();
  canvas.width = Math.max(1, Math.floor(rect.width * devicePixelRatio));
  canvas.height = Math.max(1, Math.floor(rect.height * devicePixelRatio));
  markViewChanged(true);
}

window.addEventListener('resize', resize);
resize();
requestAnimationFrame(frame);
setHud('Load a .bundle file to begin (drag it onto the canvas).');
