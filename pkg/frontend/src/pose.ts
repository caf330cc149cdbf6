/**
 * Pose editing state: per-bone overrides, selection, a bounded undo
 * stack, and keyframe export in the animation command's JSON schema.
 */

import { BonePoseInput, identityPose } from './lbs.js';
import { Quat, Vec3, quatNormalize } from './math.js';

export const UNDO_LIMIT = 64;

export interface PoseState {
  bones: BonePoseInput[];
  selected: number;
}

export interface Keyframe {
  time: number;
  bones: BonePoseInput[];
}

function cloneBones(bones: BonePoseInput[]): BonePoseInput[] {
  return bones.map((b) => ({
    rotation: [...b.rotation] as Quat,
    translation: [...b.translation] as Vec3,
  }));
}

export function clonePose(state: PoseState): PoseState {
  return { bones: cloneBones(state.bones), selected: state.selected };
}

/** Owns the live pose plus its history; every edit goes through here. */
export class PoseEditor {
  state: PoseState;
  private undoStack: PoseState[] = [];

  constructor(bones: number) {
    this.state = { bones: identityPose(bones), selected: 0 };
  }

  /** Snapshot the current state; call at the start of a gesture. */
  checkpoint(): void {
    this.undoStack.push(clonePose(this.state));
    if (this.undoStack.length > UNDO_LIMIT) {
      this.undoStack.shift();
    }
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Restore the exact pre-gesture state; returns false when empty. */
  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.state = prev;
    return true;
  }

  setRotation(bone: number, rotation: Quat): void {
    this.state.bones[bone].rotation = quatNormalize(rotation);
  }

  setTranslation(bone: number, translation: Vec3): void {
    this.state.bones[bone].translation = [...translation] as Vec3;
  }

  reset(): void {
    this.checkpoint();
    this.state = { bones: identityPose(this.state.bones.length), selected: this.state.selected };
  }
}

/**
 * Serialize captured keyframes as a pose file the CLI accepts:
 * {"samples": N, "keyframes": [{"time", "bones": [{"rotation",
 * "translation"}]}]}. Rotations are written normalized.
 */
export function exportPose(keyframes: Keyframe[], samples?: number): string {
  if (keyframes.length === 0) {
    throw new Error('capture at least one keyframe before exporting');
  }
  const frames = keyframes.map((kf, i) => ({
    time: Number.isFinite(kf.time) ? kf.time : i,
    bones: kf.bones.map((b) => ({
      rotation: quatNormalize(b.rotation),
      translation: [...b.translation],
    })),
  }));
  const doc = { samples: samples ?? keyframes.length, keyframes: frames };
  return JSON.stringify(doc, null, 1);
}
