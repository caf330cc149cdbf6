import { readFileSync } from 'node:fs';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import { clonePose, exportPose, Keyframe, PoseEditor, UNDO_LIMIT } from '../src/pose.js';
import { goldenKeyframes, GOLDEN_SAMPLES } from '../src/golden_pose.js';

describe('PoseEditor undo', () => {
  it('restores the exact previous state', () => {
    const editor = new PoseEditor(3);
    editor.checkpoint();
    const before = clonePose(editor.state);
    editor.setRotation(1, [0.9, 0.1, 0, 0.2]);
    editor.setTranslation(2, [0.5, 0, -0.25]);
    expect(editor.state).not.toEqual(before);
    expect(editor.undo()).toBe(true);
    expect(editor.state).toEqual(before);
  });

  it('stacks multiple gestures in order', () => {
    const editor = new PoseEditor(2);
    const states = [clonePose(editor.state)];
    for (let g = 0; g < 4; g++) {
      editor.checkpoint();
      editor.setTranslation(0, [g + 1, 0, 0]);
      states.push(clonePose(editor.state));
    }
    for (let g = 4; g > 0; g--) {
      expect(editor.undo()).toBe(true);
      expect(editor.state).toEqual(states[g - 1]);
    }
    expect(editor.undo()).toBe(false);
  });

  it('is bounded', () => {
    const editor = new PoseEditor(1);
    for (let g = 0; g < UNDO_LIMIT + 20; g++) {
      editor.checkpoint();
      editor.setTranslation(0, [g, 0, 0]);
    }
    expect(editor.undoDepth).toBe(UNDO_LIMIT);
  });

  it('normalizes rotations as they are set', () => {
    const editor = new PoseEditor(1);
    editor.setRotation(0, [2, 0, 0, 0]);
    expect(editor.state.bones[0].rotation).toEqual([1, 0, 0, 0]);
  });
});

describe('exportPose', () => {
  it('matches the golden fixture byte for byte', () => {
    const golden = readFileSync(
      join(__dirname, 'fixtures', 'exported_pose.json'),
      'utf-8',
    );
    expect(exportPose(goldenKeyframes(), GOLDEN_SAMPLES)).toBe(golden);
  });

  it('produces the documented schema', () => {
    const keyframes: Keyframe[] = [
      { time: 0, bones: [{ rotation: [1, 0, 0, 0], translation: [0, 0, 0] }] },
      { time: 1, bones: [{ rotation: [2, 0, 0, 0], translation: [0.1, 0, 0] }] },
    ];
    const doc = JSON.parse(exportPose(keyframes));
    expect(doc.samples).toBe(2);
    expect(doc.keyframes).toHaveLength(2);
    expect(doc.keyframes[0].time).toBe(0);
    expect(doc.keyframes[1].bones[0].rotation).toEqual([1, 0, 0, 0]); // normalized
    expect(doc.keyframes[1].bones[0].translation).toEqual([0.1, 0, 0]);
  });

  it('defaults samples to the keyframe count and accepts overrides', () => {
    const kf: Keyframe[] = [
      { time: 0, bones: [{ rotation: [1, 0, 0, 0], translation: [0, 0, 0] }] },
    ];
    expect(JSON.parse(exportPose(kf)).samples).toBe(1);
    expect(JSON.parse(exportPose(kf, 24)).samples).toBe(24);
  });

  it('refuses an empty capture', () => {
    expect(() => exportPose([])).toThrow(/keyframe/);
  });
});
