/**
 * WebGL2 splat renderer: depth-sorted, alpha-blended billboards.
 *
 * Each splat's world covariance (blended linear part times canonical
 * covariance) is projected on the CPU to a screen-space ellipse; a unit
 * quad per splat is stretched to the 3-sigma box in the vertex shader
 * and shaded with the Gaussian falloff in the fragment shader. Splats
 * draw back to front with premultiplied alpha. Bone gizmos render as
 * 1-sigma ellipsoid wire rings through a second, tiny line program.
 */

import type { LoadedModel } from './bundle.js';
import { CameraBasis, OrbitState, orbitBasis, depthOrder, viewProjection } from './camera.js';
import type { WarpedBuffers } from './lbs.js';
import type { BonePoseInput } from './lbs.js';
import { quatNormalize, quatToRotmat, Vec3 } from './math.js';

const SPLAT_VS = `#version 300 es
layout(location=0) in vec2 corner;      // unit quad, [-1,1]^2
layout(location=1) in vec2 center;      // NDC
layout(location=2) in vec2 axes;        // 3-sigma half extents, NDC
layout(location=3) in vec3 conic;       // inverse 2D covariance, pixel^2
layout(location=4) in vec4 colorOpacity;
uniform vec2 viewportHalf;
out vec2 pixelOffset;
out vec3 conicOut;
out vec4 rgba;
void main() {
  gl_Position = vec4(center + corner * axes, 0.0, 1.0);
  pixelOffset = corner * axes * viewportHalf;
  conicOut = conic;
  rgba = colorOpacity;
}`;

const SPLAT_FS = `#version 300 es
precision highp float;
in vec2 pixelOffset;
in vec3 conicOut;
in vec4 rgba;
out vec4 outColor;
void main() {
  float q = 0.5 * (conicOut.x * pixelOffset.x * pixelOffset.x
                 + 2.0 * conicOut.y * pixelOffset.x * pixelOffset.y
                 + conicOut.z * pixelOffset.y * pixelOffset.y);
  if (q > 4.5) discard;
  float alpha = rgba.a * exp(-q);
  outColor = vec4(rgba.rgb * alpha, alpha);
}`;

const LINE_VS = `#version 300 es
layout(location=0) in vec3 position;
layout(location=1) in vec3 color;
uniform mat4 mvp;
out vec3 lineColor;
void main() {
  gl_Position = mvp * vec4(position, 1.0);
  lineColor = color;
}`;

const LINE_FS = `#version 300 es
precision highp float;
in vec3 lineColor;
out vec4 outColor;
void main() { outColor = vec4(lineColor, 1.0); }`;

const RING_SEGMENTS = 48;
const FLOATS_PER_INSTANCE = 11; // center 2, axes 2, conic 3, rgba 4

export class SplatRenderer {
  private gl: WebGL2RenderingContext;
  private splatProgram: WebGLProgram;
  private lineProgram: WebGLProgram;
  private quadBuffer: WebGLBuffer;
  private instanceBuffer: WebGLBuffer;
  private lineBuffer: WebGLBuffer;
  private vao: WebGLVertexArrayObject;
  private lineVao: WebGLVertexArrayObject;

  private model: LoadedModel | null = null;
  private warped: WarpedBuffers | null = null;
  /** (n,6) symmetric world covariances: xx xy xz yy yz zz. */
  private worldCov: Float32Array = new Float32Array(0);
  private order: Uint32Array = new Uint32Array(0);
  private instanceData: Float32Array = new Float32Array(0);
  private lineVertices: Float32Array = new Float32Array(0);
  background: [number, number, number] = [0, 0, 0];
  onContextLost: (() => void) | null = null;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext('webgl2', { antialias: false, alpha: false });
    if (!gl) throw new Error('this browser does not offer WebGL2');
    this.gl = gl;
    canvas.addEventListener('webglcontextlost', (ev) => {
      ev.preventDefault();
      this.onContextLost?.();
    });
    this.splatProgram = this.compile(SPLAT_VS, SPLAT_FS);
    this.lineProgram = this.compile(LINE_VS, LINE_FS);
    this.quadBuffer = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.quadBuffer);
    gl.bufferData(
      gl.ARRAY_BUFFER,
      new Float32Array([-1, -1, 1, -1, -1, 1, 1, 1]),
      gl.STATIC_DRAW,
    );
    this.instanceBuffer = gl.createBuffer()!;
    this.lineBuffer = gl.createBuffer()!;
    this.vao = gl.createVertexArray()!;
    this.lineVao = gl.createVertexArray()!;
    this.setupVaos();
  }

  private compile(vsSource: string, fsSource: string): WebGLProgram {
    const gl = this.gl;
    const make = (type: number, source: string) => {
      const shader = gl.createShader(type)!;
      gl.shaderSource(shader, source);
      gl.compileShader(shader);
      if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
        throw new Error(`shader compile failed: ${gl.getShaderInfoLog(shader)}`);
      }
      return shader;
    };
    const program = gl.createProgram()!;
    gl.attachShader(program, make(gl.VERTEX_SHADER, vsSource));
    gl.attachShader(program, make(gl.FRAGMENT_SHADER, fsSource));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
    }
    return program;
  }

  private setupVaos(): void {
    const gl = this.gl;
    gl.bindVertexArray(this.vao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.quadBuffer);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.instanceBuffer);
    const stride = FLOATS_PER_INSTANCE * 4;
    const layout: Array<[number, number, number]> = [
      [1, 2, 0],
      [2, 2, 8],
      [3, 3, 16],
      [4, 4, 28],
    ];
    for (const [loc, size, offset] of layout) {
      gl.enableVertexAttribArray(loc);
      gl.vertexAttribPointer(loc, size, gl.FLOAT, false, stride, offset);
      gl.vertexAttribDivisor(loc, 1);
    }
    gl.bindVertexArray(this.lineVao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.lineBuffer);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 3, gl.FLOAT, false, 24, 0);
    gl.enableVertexAttribArray(1);
    gl.vertexAttribPointer(1, 3, gl.FLOAT, false, 24, 12);
    gl.bindVertexArray(null);
  }

  setModel(model: LoadedModel): void {
    this.model = model;
    this.warped = null;
    this.worldCov = new Float32Array(model.splats * 6);
    this.order = new Uint32Array(model.splats);
    this.instanceData = new Float32Array(model.splats * FLOATS_PER_INSTANCE);
  }

  /** Install a new skinning result and refresh the world covariances. */
  setWarped(warped: WarpedBuffers): void {
    if (!this.model) return;
    this.warped = warped;
    const { splats: n } = this.model;
    const q = this.model.quaternions;
    const s = this.model.scales;
    const a = warped.linear;
    for (let i = 0; i < n; i++) {
      const r = quatToRotmat(
        quatNormalize([q[4 * i], q[4 * i + 1], q[4 * i + 2], q[4 * i + 3]]),
      );
      const s0 = s[3 * i] ** 2;
      const s1 = s[3 * i + 1] ** 2;
      const s2 = s[3 * i + 2] ** 2;
      // M = A R
      const o = 9 * i;
      const m = [0, 0, 0, 0, 0, 0, 0, 0, 0];
      for (let row = 0; row < 3; row++) {
        for (let col = 0; col < 3; col++) {
          m[3 * row + col] =
            a[o + 3 * row] * r[col] + a[o + 3 * row + 1] * r[3 + col] + a[o + 3 * row + 2] * r[6 + col];
        }
      }
      const k = 6 * i;
      this.worldCov[k] = m[0] * s0 * m[0] + m[1] * s1 * m[1] + m[2] * s2 * m[2];
      this.worldCov[k + 1] = m[0] * s0 * m[3] + m[1] * s1 * m[4] + m[2] * s2 * m[5];
      this.worldCov[k + 2] = m[0] * s0 * m[6] + m[1] * s1 * m[7] + m[2] * s2 * m[8];
      this.worldCov[k + 3] = m[3] * s0 * m[3] + m[4] * s1 * m[4] + m[5] * s2 * m[5];
      this.worldCov[k + 4] = m[3] * s0 * m[6] + m[4] * s1 * m[7] + m[5] * s2 * m[8];
      this.worldCov[k + 5] = m[6] * s0 * m[6] + m[7] * s1 * m[7] + m[8] * s2 * m[8];
    }
  }

  resort(basis: CameraBasis): void {
    if (!this.warped) return;
    this.order = depthOrder(this.warped.positions, basis);
  }

  /**
   * Project, upload, and draw. `resortNow` skips the depth resort when
   * false (stale order during drags keeps interaction smooth).
   */
  draw(orbit: OrbitState, pose: BonePoseInput[] | null, selected: number, resortNow: boolean): void {
    const gl = this.gl;
    const model = this.model;
    const width = this.canvas.width;
    const height = this.canvas.height;
    gl.viewport(0, 0, width, height);
    gl.clearColor(this.background[0], this.background[1], this.background[2], 1);
    gl.clear(gl.COLOR_BUFFER_BIT);
    if (!model || !this.warped || model.splats === 0) {
      if (model && pose) this.drawGizmos(orbit, pose, selected, width / height);
      return;
    }
    const basis = orbitBasis(orbit);
    if (resortNow || this.order.length !== model.splats) this.resort(basis);

    const fovRad = (orbit.fovDeg * Math.PI) / 180;
    const fy = 0.5 * height / Math.tan(fovRad / 2);
    const fx = fy;
    const positions = this.warped.positions;
    const near = 0.01 * orbit.radius;
    const data = this.instanceData;
    let count = 0;
    for (let oi = 0; oi < this.order.length; oi++) {
      const i = this.order[oi];
      const wx = positions[3 * i] - basis.position[0];
      const wy = positions[3 * i + 1] - basis.position[1];
      const wz = positions[3 * i + 2] - basis.position[2];
      // camera space: x right, y up, z along the view direction
      const cx = basis.right[0] * wx + basis.right[1] * wy + basis.right[2] * wz;
      const cy = basis.up[0] * wx + basis.up[1] * wy + basis.up[2] * wz;
      const cz = basis.forward[0] * wx + basis.forward[1] * wy + basis.forward[2] * wz;
      if (cz <= near) continue;

      // rotate the world covariance into camera axes
      const k = 6 * i;
      const c = this.worldCov;
      const cov = [c[k], c[k + 1], c[k + 2], c[k + 1], c[k + 3], c[k + 4], c[k + 2], c[k + 4], c[k + 5]];
      const rows = [basis.right, basis.up, basis.forward];
      const cc: number[] = new Array(9);
      for (let r0 = 0; r0 < 3; r0++) {
        const row = rows[r0];
        const t0 = row[0] * cov[0] + row[1] * cov[3] + row[2] * cov[6];
        const t1 = row[0] * cov[1] + row[1] * cov[4] + row[2] * cov[7];
        const t2 = row[0] * cov[2] + row[1] * cov[5] + row[2] * cov[8];
        for (let c0 = 0; c0 < 3; c0++) {
          const col = rows[c0];
          cc[3 * r0 + c0] = t0 * col[0] + t1 * col[1] + t2 * col[2];
        }
      }
      // perspective Jacobian to pixels
      const j00 = fx / cz;
      const j02 = (-fx * cx) / (cz * cz);
      const j11 = fy / cz;
      const j12 = (-fy * cy) / (cz * cz);
      let sxx = j00 * (j00 * cc[0] + j02 * cc[6]) + j02 * (j00 * cc[2] + j02 * cc[8]);
      let sxy = j00 * (j11 * cc[1] + j12 * cc[2]) + j02 * (j11 * cc[7] + j12 * cc[8]);
      let syy = j11 * (j11 * cc[4] + j12 * cc[5]) + j12 * (j11 * cc[5] + j12 * cc[8]);
      sxx += 0.3;
      syy += 0.3; // screen-space dilation keeps sub-pixel splats visible
      const det = sxx * syy - sxy * sxy;
      if (det <= 0) continue;
      const inv = 1 / det;

      const o = count * FLOATS_PER_INSTANCE;
      data[o] = (fx * (cx / cz) * 2) / width; // NDC center x
      data[o + 1] = (fy * (cy / cz) * 2) / height;
      data[o + 2] = (3 * Math.sqrt(sxx) * 2) / width; // NDC half extents
      data[o + 3] = (3 * Math.sqrt(syy) * 2) / height;
      data[o + 4] = syy * inv; // conic a
      data[o + 5] = -sxy * inv; // conic b
      data[o + 6] = sxx * inv; // conic c
      data[o + 7] = model.colors[3 * i];
      data[o + 8] = model.colors[3 * i + 1];
      data[o + 9] = model.colors[3 * i + 2];
      data[o + 10] = model.opacities[i];
      count++;
    }

    gl.enable(gl.BLEND);
    gl.blendFunc(gl.ONE, gl.ONE_MINUS_SRC_ALPHA);
    gl.useProgram(this.splatProgram);
    gl.uniform2f(
      gl.getUniformLocation(this.splatProgram, 'viewportHalf'),
      width / 2,
      height / 2,
    );
    gl.bindVertexArray(this.vao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.instanceBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, data.subarray(0, count * FLOATS_PER_INSTANCE), gl.DYNAMIC_DRAW);
    gl.drawArraysInstanced(gl.TRIANGLE_STRIP, 0, 4, count);
    gl.bindVertexArray(null);

    if (pose) this.drawGizmos(orbit, pose, selected, width / height);
  }

  /** Wire rings of each bone's 1-sigma ellipsoid under the current pose. */
  private drawGizmos(
    orbit: OrbitState,
    pose: BonePoseInput[],
    selected: number,
    aspect: number,
  ): void {
    const model = this.model;
    if (!model || model.bones === 0) return;
    const gl = this.gl;
    const b = model.bones;
    const ringsPerBone = 3;
    const floatsNeeded = b * ringsPerBone * RING_SEGMENTS * 2 * 6;
    if (this.lineVertices.length !== floatsNeeded) {
      this.lineVertices = new Float32Array(floatsNeeded);
    }
    const v = this.lineVertices;
    let cursor = 0;
    for (let k = 0; k < b; k++) {
      const center: Vec3 = [
        model.boneCenters[3 * k],
        model.boneCenters[3 * k + 1],
        model.boneCenters[3 * k + 2],
      ];
      const rot = quatToRotmat(quatNormalize(pose[k].rotation));
      const t = pose[k].translation;
      const axes = [
        1 / Math.sqrt(model.boneScales[3 * k]),
        1 / Math.sqrt(model.boneScales[3 * k + 1]),
        1 / Math.sqrt(model.boneScales[3 * k + 2]),
      ];
      const m = model.boneRotations;
      const color: Vec3 = k === selected ? [1, 0.8, 0.1] : [0.35, 0.65, 1];
      // local ring planes: (0,1), (1,2), (2,0)
      for (let plane = 0; plane < 3; plane++) {
        const u = plane;
        const w = (plane + 1) % 3;
        let prev: Vec3 | null = null;
        for (let seg = 0; seg <= RING_SEGMENTS; seg++) {
          const ang = (2 * Math.PI * seg) / RING_SEGMENTS;
          const local: Vec3 = [0, 0, 0];
          local[u] = axes[u] * Math.cos(ang);
          local[w] = axes[w] * Math.sin(ang);
          // canonical orientation: rows of the bone rotation map local to world
          const world: Vec3 = [
            m[9 * k] * local[0] + m[9 * k + 3] * local[1] + m[9 * k + 6] * local[2],
            m[9 * k + 1] * local[0] + m[9 * k + 4] * local[1] + m[9 * k + 7] * local[2],
            m[9 * k + 2] * local[0] + m[9 * k + 5] * local[1] + m[9 * k + 8] * local[2],
          ];
          const canonical: Vec3 = [
            world[0] + center[0],
            world[1] + center[1],
            world[2] + center[2],
          ];
          // user pose: R (x - c) + c + t
          const rel: Vec3 = [
            canonical[0] - center[0],
            canonical[1] - center[1],
            canonical[2] - center[2],
          ];
          const posed: Vec3 = [
            rot[0] * rel[0] + rot[1] * rel[1] + rot[2] * rel[2] + center[0] + t[0],
            rot[3] * rel[0] + rot[4] * rel[1] + rot[5] * rel[2] + center[1] + t[1],
            rot[6] * rel[0] + rot[7] * rel[1] + rot[8] * rel[2] + center[2] + t[2],
          ];
          if (prev) {
            v[cursor++] = prev[0]; v[cursor++] = prev[1]; v[cursor++] = prev[2];
            v[cursor++] = color[0]; v[cursor++] = color[1]; v[cursor++] = color[2];
            v[cursor++] = posed[0]; v[cursor++] = posed[1]; v[cursor++] = posed[2];
            v[cursor++] = color[0]; v[cursor++] = color[1]; v[cursor++] = color[2];
          }
          prev = posed;
        }
      }
    }
    gl.disable(gl.BLEND);
    gl.useProgram(this.lineProgram);
    gl.uniformMatrix4fv(
      gl.getUniformLocation(this.lineProgram, 'mvp'),
      false,
      viewProjection(orbit, aspect),
    );
    gl.bindVertexArray(this.lineVao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.lineBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, v.subarray(0, cursor), gl.DYNAMIC_DRAW);
    gl.drawArrays(gl.LINES, 0, cursor / 6);
    gl.bindVertexArray(null);
  }
}
