import { readFileSync } from 'node:fs';
import { join } from 'node:path';

const FIXTURES = join(__dirname, 'fixtures');

export function loadFixture(name: string): ArrayBuffer {
  const buf = readFileSync(join(FIXTURES, name));
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

export function sidecar(name: string): Record<string, number> {
  return JSON.parse(readFileSync(join(FIXTURES, name), 'utf-8'));
}

export function fixturePath(name: string): string {
  return join(FIXTURES, name);
}
