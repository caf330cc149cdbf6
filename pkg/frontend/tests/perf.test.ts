import { describe, expect, it } from 'vitest';

import { parseBundle } from '../src/bundle.js';
import { depthOrder, orbitBasis } from '../src/camera.js';
import { applyPose, identityPose } from '../src/lbs.js';
import { Quat } from '../src/math.js';
import { loadFixture } from './helpers.js';

// Node-side budget proxies for the interactive targets: parsing a
// 10k-splat bundle must fit the 2 s load budget, and one full pose
// update (skinning plus depth resort) the 100 ms interaction budget.

describe('throughput', () => {
  it('parses a 10k-splat bundle well inside 2 s', () => {
    const buf = loadFixture('big.bundle');
    parseBundle(buf); // warm the JIT before timing
    const start = performance.now();
    const model = parseBundle(buf);
    const elapsed = performance.now() - start;
    expect(model.splats).toBe(10_000);
    expect(elapsed).toBeLessThan(2000);
  });

  it('skins and resorts 10k splats inside the 100 ms pose budget', () => {
    const model = parseBundle(loadFixture('big.bundle'));
    const pose = identityPose(model.bones);
    pose[1].rotation = [Math.cos(0.3), 0, Math.sin(0.3), 0] as Quat;
    pose[2].translation = [0.1, -0.05, 0.2];
    const basis = orbitBasis({
      target: [0, 0, 0],
      radius: 2.5,
      azimuthDeg: 30,
      elevationDeg: 20,
      fovDeg: 45,
    });
    applyPose(model, pose); // warm-up
    const start = performance.now();
    const warped = applyPose(model, pose);
    const order = depthOrder(warped.positions, basis);
    const elapsed = performance.now() - start;
    expect(order.length).toBe(10_000);
    expect(elapsed).toBeLessThan(100);
  });
});
