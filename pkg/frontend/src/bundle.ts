/**
 * Bundle parser: little-endian "BAGS" container of float32 arrays.
 *
 * Layout (see docs/formats.md in the repository root):
 *
 *   magic "BAGS" | u32 version | u32 n_splats | u32 n_bones
 *   | positions n*3 | quaternions n*4 | scales n*3 | opacities n
 *   | colors n*3 | weights n*b | bone_centers b*3 | bone_scales b*3
 *   | bone_rotations b*9
 */

export const SUPPORTED_VERSION = 1;

export class BundleError extends Error {}

export interface LoadedModel {
  version: number;
  splats: number;
  bones: number;
  /** (n,3) canonical splat centers. */
  positions: Float32Array;
  /** (n,4) unit quaternions, (w, x, y, z). */
  quaternions: Float32Array;
  /** (n,3) per-axis standard deviations. */
  scales: Float32Array;
  /** (n,) opacities in [0, 1]. */
  opacities: Float32Array;
  /** (n,3) RGB in [0, 1]. */
  colors: Float32Array;
  /** (n,b) baked skinning weights, rows on the simplex. */
  weights: Float32Array;
  /** (b,3) canonical bone centers, the pose pivots. */
  boneCenters: Float32Array;
  /** (b,3) per-axis precisions; 1-sigma semi-axis = 1/sqrt(value). */
  boneScales: Float32Array;
  /** (b,9) row-major orthonormal bone orientations. */
  boneRotations: Float32Array;
}

const MAGIC = [0x42, 0x41, 0x47, 0x53]; // "BAGS"

/** Parse a bundle buffer; throws BundleError on anything malformed. */
export function parseBundle(buffer: ArrayBuffer): LoadedModel {
  const bytes = new Uint8Array(buffer);
  if (bytes.length < 16) {
    throw new BundleError(`truncated bundle: ${bytes.length} bytes, header needs 16`);
  }
  for (let i = 0; i < 4; i++) {
    if (bytes[i] !== MAGIC[i]) {
      throw new BundleError('bad magic bytes: not a splat bundle');
    }
  }
  const view = new DataView(buffer);
  const version = view.getUint32(4, true);
  const n = view.getUint32(8, true);
  const b = view.getUint32(12, true);
  if (version > SUPPORTED_VERSION) {
    throw new BundleError(
      `bundle version ${version} is newer than supported (${SUPPORTED_VERSION})`,
    );
  }

  const counts: Array<[keyof LoadedModel, number]> = [
    ['positions', n * 3],
    ['quaternions', n * 4],
    ['scales', n * 3],
    ['opacities', n],
    ['colors', n * 3],
    ['weights', n * b],
    ['boneCenters', b * 3],
    ['boneScales', b * 3],
    ['boneRotations', b * 9],
  ];
  const total = counts.reduce((acc, [, c]) => acc + c, 0);
  if (bytes.length !== 16 + 4 * total) {
    throw new BundleError(
      `payload is ${bytes.length - 16} bytes, header implies ${4 * total}`,
    );
  }

  const model = { version, splats: n, bones: b } as LoadedModel;
  let offset = 16;
  for (const [name, count] of counts) {
    // Copy out of the file buffer so the arrays stay alive independently
    // and are aligned regardless of the 16-byte header shift.
    const arr = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      arr[i] = view.getFloat32(offset + 4 * i, true);
    }
    (model as unknown as Record<string, unknown>)[name] = arr;
    offset += 4 * count;
  }

  validateModel(model);
  return model;
}

function validateModel(model: LoadedModel): void {
  const { splats: n, bones: b } = model;
  for (let i = 0; i < n * b; i += Math.max(1, Math.floor((n * b) / 256))) {
    const w = model.weights[i];
    if (!(w >= -1e-6 && w <= 1 + 1e-6)) {
      throw new BundleError(`skinning weight out of range at ${i}: ${w}`);
    }
  }
  if (b > 0 && n > 0) {
    // Spot-check a few weight rows for the simplex property.
    const step = Math.max(1, Math.floor(n / 64));
    for (let row = 0; row < n; row += step) {
      let sum = 0;
      for (let k = 0; k < b; k++) sum += model.weights[row * b + k];
      if (Math.abs(sum - 1) > 1e-4) {
        throw new BundleError(`weight row ${row} sums to ${sum}, expected 1`);
      }
    }
  }
}

export interface BundleSidecar {
  version: number;
  splats: number;
  bones: number;
  scene_extent: number;
  background: [number, number, number];
  time_range: [number, number];
}
