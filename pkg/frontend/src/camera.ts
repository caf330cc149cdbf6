/** Orbit camera math and the painter's-order depth sort. */

import { Vec3 } from './math.js';

export interface OrbitState {
  target: Vec3;
  radius: number;
  azimuthDeg: number;
  elevationDeg: number;
  fovDeg: number;
}

export interface CameraBasis {
  position: Vec3;
  right: Vec3;
  up: Vec3;
  /** Unit vector from the camera toward the target. */
  forward: Vec3;
}

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}

export function orbitBasis(state: OrbitState): CameraBasis {
  const az = (state.azimuthDeg * Math.PI) / 180;
  const el = (state.elevationDeg * Math.PI) / 180;
  const offset: Vec3 = [
    state.radius * Math.cos(el) * Math.sin(az),
    state.radius * Math.sin(el),
    state.radius * Math.cos(el) * Math.cos(az),
  ];
  const position: Vec3 = [
    state.target[0] + offset[0],
    state.target[1] + offset[1],
    state.target[2] + offset[2],
  ];
  const forward = normalize(sub(state.target, position));
  const right = normalize(cross(forward, [0, 1, 0]));
  const up = cross(right, forward);
  return { position, right, up, forward };
}

/** Column-major 4x4 world-to-clip matrix for WebGL. */
export function viewProjection(state: OrbitState, aspect: number): Float32Array {
  const { position, right, up, forward } = orbitBasis(state);
  const f = 1 / Math.tan(((state.fovDeg * Math.PI) / 180) / 2);
  const near = 0.01 * state.radius;
  const far = 100 * state.radius;
  // view rows: right, up, -forward with translations
  const tx = -(right[0] * position[0] + right[1] * position[1] + right[2] * position[2]);
  const ty = -(up[0] * position[0] + up[1] * position[1] + up[2] * position[2]);
  const tz = forward[0] * position[0] + forward[1] * position[1] + forward[2] * position[2];
  const a = far / (near - far);
  const bcoef = (near * far) / (near - far);
  // proj * view, written column-major
  const out = new Float32Array(16);
  out[0] = (f / aspect) * right[0];
  out[1] = f * up[0];
  out[2] = a * -forward[0];
  out[3] = -forward[0];
  out[4] = (f / aspect) * right[1];
  out[5] = f * up[1];
  out[6] = a * -forward[1];
  out[7] = -forward[1];
  out[8] = (f / aspect) * right[2];
  out[9] = f * up[2];
  out[10] = a * -forward[2];
  out[11] = -forward[2];
  out[12] = (f / aspect) * tx;
  out[13] = f * ty;
  out[14] = a * tz + bcoef;
  out[15] = tz;
  return out;
}

/**
 * Indices of the splats sorted back to front along the view direction.
 * Typed-array sort on precomputed keys; 10k splats sort in well under
 * the interaction latency budget.
 */
export function depthOrder(positions: Float32Array, basis: CameraBasis): Uint32Array {
  const n = positions.length / 3;
  const depth = new Float32Array(n);
  const [fx, fy, fz] = basis.forward;
  const [px, py, pz] = basis.position;
  for (let i = 0; i < n; i++) {
    depth[i] =
      (positions[3 * i] - px) * fx +
      (positions[3 * i + 1] - py) * fy +
      (positions[3 * i + 2] - pz) * fz;
  }
  const order = new Uint32Array(n);
  for (let i = 0; i < n; i++) order[i] = i;
  order.sort((a, b) => depth[b] - depth[a]);
  return order;
}
