/**
 * Client-side linear blend skinning over baked weights.
 *
 * A user pose assigns each bone a rotation and translation that pivot at
 * the bone's canonical center: x -> R (x - c) + c + t. Splats blend the
 * per-bone motions with their baked weights in displacement form,
 *
 *   x' = x + sum_b w_b ((R_b x + d_b) - x),   d_b = c_b + t_b - R_b c_b
 *
 * so the identity pose reproduces the canonical buffer bit for bit:
 * every displacement is exactly zero before any weight touches it.
 * Covariances use the blended linear part A = I + sum_b w_b (R_b - I);
 * the weights are constants here, so the spatial weight-gradient term
 * the training warp carries is intentionally absent.
 */

import type { LoadedModel } from './bundle.js';
import { Mat3, Quat, Vec3, quatNormalize, quatToRotmat } from './math.js';

export class PoseCountError extends Error {}

export interface BonePoseInput {
  rotation: Quat;
  translation: Vec3;
}

export interface WarpedBuffers {
  /** (n,3) posed splat centers. */
  positions: Float32Array;
  /** (n,9) row-major blended linear part per splat. */
  linear: Float32Array;
}

interface Delta {
  r: Mat3;
  d: Vec3;
  isIdentity: boolean;
}

function poseDelta(center: Vec3, pose: BonePoseInput): Delta {
  const q = quatNormalize(pose.rotation);
  const r = quatToRotmat(q);
  const t = pose.translation;
  const rc: Vec3 = [
    r[0] * center[0] + r[1] * center[1] + r[2] * center[2],
    r[3] * center[0] + r[4] * center[1] + r[5] * center[2],
    r[6] * center[0] + r[7] * center[1] + r[8] * center[2],
  ];
  const d: Vec3 = [
    center[0] + t[0] - rc[0],
    center[1] + t[1] - rc[1],
    center[2] + t[2] - rc[2],
  ];
  const isIdentity =
    q[0] === 1 && q[1] === 0 && q[2] === 0 && q[3] === 0 &&
    t[0] === 0 && t[1] === 0 && t[2] === 0;
  return { r, d, isIdentity };
}

export function identityPose(bones: number): BonePoseInput[] {
  return Array.from({ length: bones }, () => ({
    rotation: [1, 0, 0, 0] as Quat,
    translation: [0, 0, 0] as Vec3,
  }));
}

/** Warp the canonical splats by a user pose; allocates fresh buffers. */
export function applyPose(model: LoadedModel, pose: BonePoseInput[]): WarpedBuffers {
  const { splats: n, bones: b } = model;
  if (pose.length !== b) {
    throw new PoseCountError(`pose has ${pose.length} bones, model has ${b}`);
  }
  const positions = new Float32Array(n * 3);
  const linear = new Float32Array(n * 9);

  const deltas = model.boneCenters.length
    ? Array.from({ length: b }, (_, k) =>
        poseDelta(
          [model.boneCenters[3 * k], model.boneCenters[3 * k + 1], model.boneCenters[3 * k + 2]],
          pose[k],
        ),
      )
    : [];
  const allIdentity = deltas.every((d) => d.isIdentity);
  if (allIdentity) {
    positions.set(model.positions);
    for (let i = 0; i < n; i++) {
      linear[9 * i] = 1;
      linear[9 * i + 4] = 1;
      linear[9 * i + 8] = 1;
    }
    return { positions, linear };
  }

  const w = model.weights;
  const p = model.positions;
  for (let i = 0; i < n; i++) {
    const x = p[3 * i];
    const y = p[3 * i + 1];
    const z = p[3 * i + 2];
    let dx = 0; let dy = 0; let dz = 0;
    // A = I + sum_b w_b (R_b - I)
    let a0 = 1; let a1 = 0; let a2 = 0;
    let a3 = 0; let a4 = 1; let a5 = 0;
    let a6 = 0; let a7 = 0; let a8 = 1;
    for (let k = 0; k < b; k++) {
      const wk = w[i * b + k];
      if (wk === 0) continue;
      const { r, d, isIdentity } = deltas[k];
      if (isIdentity) continue; // zero displacement, R - I = 0 exactly
      dx += wk * (r[0] * x + r[1] * y + r[2] * z + d[0] - x);
      dy += wk * (r[3] * x + r[4] * y + r[5] * z + d[1] - y);
      dz += wk * (r[6] * x + r[7] * y + r[8] * z + d[2] - z);
      a0 += wk * (r[0] - 1); a1 += wk * r[1]; a2 += wk * r[2];
      a3 += wk * r[3]; a4 += wk * (r[4] - 1); a5 += wk * r[5];
      a6 += wk * r[6]; a7 += wk * r[7]; a8 += wk * (r[8] - 1);
    }
    positions[3 * i] = x + dx;
    positions[3 * i + 1] = y + dy;
    positions[3 * i + 2] = z + dz;
    linear[9 * i] = a0; linear[9 * i + 1] = a1; linear[9 * i + 2] = a2;
    linear[9 * i + 3] = a3; linear[9 * i + 4] = a4; linear[9 * i + 5] = a5;
    linear[9 * i + 6] = a6; linear[9 * i + 7] = a7; linear[9 * i + 8] = a8;
  }
  return { positions, linear };
}

/**
 * World-space covariance of one posed splat: A R diag(s^2) R^T A^T,
 * written row-major into `out` at `outOffset`.
 */
export function posedCovariance(
  model: LoadedModel,
  warped: WarpedBuffers,
  index: number,
  out: Float32Array,
  outOffset = 0,
): void {
  const q: Quat = [
    model.quaternions[4 * index],
    model.quaternions[4 * index + 1],
    model.quaternions[4 * index + 2],
    model.quaternions[4 * index + 3],
  ];
  const r = quatToRotmat(quatNormalize(q));
  const s0 = model.scales[3 * index] ** 2;
  const s1 = model.scales[3 * index + 1] ** 2;
  const s2 = model.scales[3 * index + 2] ** 2;
  // M = A R, then cov = M diag(s^2) M^T
  const a = warped.linear;
  const o = 9 * index;
  const m = new Array<number>(9);
  for (let row = 0; row < 3; row++) {
    for (let col = 0; col < 3; col++) {
      m[3 * row + col] =
        a[o + 3 * row] * r[col] +
        a[o + 3 * row + 1] * r[3 + col] +
        a[o + 3 * row + 2] * r[6 + col];
    }
  }
  for (let row = 0; row < 3; row++) {
    for (let col = 0; col < 3; col++) {
      out[outOffset + 3 * row + col] =
        m[3 * row] * s0 * m[3 * col] +
        m[3 * row + 1] * s1 * m[3 * col + 1] +
        m[3 * row + 2] * s2 * m[3 * col + 2];
    }
  }
}
