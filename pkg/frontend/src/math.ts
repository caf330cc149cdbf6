/** Quaternion and small-matrix helpers shared by skinning and UI. */

export type Quat = [number, number, number, number]; // (w, x, y, z)
export type Vec3 = [number, number, number];
/** Row-major 3x3. */
export type Mat3 = [number, number, number, number, number, number, number, number, number];

export const IDENTITY_QUAT: Quat = [1, 0, 0, 0];

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  if (n === 0) return [1, 0, 0, 0];
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

/**
 * Rotation matrix of a unit quaternion.
 *
 * The identity quaternion maps to the exact identity matrix: every
 * off-diagonal term is a product with x, y, or z (all exactly 0) and the
 * diagonal is 1 - 2*(0 + 0).
 */
export function quatToRotmat(q: Quat): Mat3 {
  const [w, x, y, z] = q;
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ];
}

export function quatFromAxisAngle(axis: Vec3, angleRad: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  if (n === 0) return [1, 0, 0, 0];
  const h = angleRad / 2;
  const s = Math.sin(h) / n;
  return [Math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s];
}

export function quatMultiply(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function mat3MulVec(m: Mat3 | Float32Array, v: Vec3, offset = 0): Vec3 {
  return [
    m[offset] * v[0] + m[offset + 1] * v[1] + m[offset + 2] * v[2],
    m[offset + 3] * v[0] + m[offset + 4] * v[1] + m[offset + 5] * v[2],
    m[offset + 6] * v[0] + m[offset + 7] * v[1] + m[offset + 8] * v[2],
  ];
}
