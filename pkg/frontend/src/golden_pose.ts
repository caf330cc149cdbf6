/**
 * Deterministic demo keyframes: identity, then a bend of bone 0 with a
 * small lift of bone 2. They back the "demo pose" button and double as
 * the golden export fixture that pins the round trip into the CLI's
 * animate command.
 */

import { Keyframe } from './pose.js';
import { Quat, quatFromAxisAngle } from './math.js';

export const GOLDEN_SAMPLES = 4;
export const GOLDEN_BONES = 3;

export function goldenKeyframes(): Keyframe[] {
  const identity: Quat = [1, 0, 0, 0];
  const bend = quatFromAxisAngle([0, 0, 1], Math.PI / 6);
  return [
    {
      time: 0,
      bones: [
        { rotation: identity, translation: [0, 0, 0] },
        { rotation: identity, translation: [0, 0, 0] },
        { rotation: identity, translation: [0, 0, 0] },
      ],
    },
    {
      time: 1,
      bones: [
        { rotation: bend, translation: [0, 0, 0] },
        { rotation: identity, translation: [0, 0, 0] },
        { rotation: identity, translation: [0, 0.05, 0] },
      ],
    },
  ];
}
