// Live integration against the real Python collect service: a full scripted
// session must leave exactly 25 judgments and 1 description in the export,
// and a submit whose response is lost must not produce a duplicate record.

import { ChildProcess, execFileSync, spawn } from 'node:child_process';
import { mkdtempSync, readFileSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { CollectApi, Side } from '../src/api.js';
import { SessionController } from '../src/session.js';

const PYTHON = process.env.PYTHON ?? 'python3';

let workDir: string;
let server: ChildProcess;
let baseUrl: string;

function startServer(): Promise<string> {
  server = spawn(
    PYTHON,
    [
      '-u', '-m', 'stylepref.cli', 'serve',
      '--pairs', 'data/pairs_train.jsonl',
      '--manifest', 'data/manifest.jsonl',
      '--log', 'log.jsonl',
      '--port', '0',
      '--session-size', '25',
    ],
    { cwd: workDir },
  );
  return new Promise((resolve, reject) => {
    let out = '';
    server.stdout!.on('data', (chunk: Buffer) => {
      out += chunk.toString();
      const m = out.match(/serving on (http:\/\/[\d.]+:\d+)/);
      if (m) resolve(m[1]);
    });
    server.stderr!.on('data', (chunk: Buffer) => {
      out += chunk.toString();
    });
    server.on('exit', () => reject(new Error(`service exited early:\n${out}`)));
    setTimeout(() => reject(new Error(`service did not start:\n${out}`)), 20_000);
  });
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), 'stylepref-ui-'));
  execFileSync(
    PYTHON,
    [
      '-m', 'stylepref.cli', 'simulate',
      '--out', 'data',
      '--n-utterances', '40',
      '--n-pairs', '60',
      '--n-judgments', '120',
      '--seed', '2',
    ],
    { cwd: workDir },
  );
  baseUrl = await startServer();
}, 60_000);

afterAll(() => {
  server?.kill();
  rmSync(workDir, { recursive: true, force: true });
});

async function exportLines(): Promise<string[]> {
  const res = await fetch(`${baseUrl}/export`);
  const body = await res.text();
  return body.split('\n').filter((line) => line.length > 0);
}

describe('rater UI against the live service', () => {
  it('completes a 25-trial session with exactly 25 judgments and 1 description', async () => {
    const api = new CollectApi(baseUrl);

    // drop the response of one mid-session submit to force the retry path
    const realSubmit = api.submitJudgment.bind(api);
    let dropNext = false;
    let submitCalls = 0;
    api.submitJudgment = async (sid, pairId, side) => {
      submitCalls += 1;
      const ack = await realSubmit(sid, pairId, side);
      if (dropNext) {
        dropNext = false;
        throw new TypeError('simulated lost response');
      }
      return ack;
    };

    const c = new SessionController(api);
    await c.start({
      rater_id: 'ui-test',
      age_band: '30s',
      gender: 'female',
      familiarity: 'high',
    });
    expect(c.phase).toBe('trial');
    expect(c.trial?.session_size).toBe(25);

    const seenPairs: string[] = [];
    let trialCount = 0;
    while (c.phase === 'trial') {
      trialCount += 1;
      expect(c.trial?.progress).toBe(`${trialCount} of 25`);
      seenPairs.push(c.trial!.pair_id);
      expect(c.canSubmit()).toBe(false); // nothing played yet

      if (trialCount === 12) dropNext = true;
      const side: Side = trialCount % 2 === 0 ? 'left' : 'right';
      c.markPlayed('left');
      c.markPlayed('right');
      c.select(side);
      await c.submit();
      expect(c.error).toBeNull(); // lost-ack reconciliation is silent
    }

    expect(trialCount).toBe(25);
    expect(new Set(seenPairs).size).toBe(25);
    expect(c.phase).toBe('description');
    await c.submitDescription('clearer articulation and exaggerated pitch');
    expect(c.phase).toBe('done');

    const lines = await exportLines();
    expect(lines).toHaveLength(25);
    const records = lines.map((line) => JSON.parse(line) as Record<string, unknown>);
    for (const rec of records) {
      expect(['A', 'B']).toContain(rec.choice);
      expect(['A', 'B']).toContain(rec.presented_left);
    }
    expect(records.map((r) => r.pair_id)).toEqual(seenPairs);

    // the dropped-response trial produced exactly one server record
    const counts = new Map<string, number>();
    for (const rec of records) {
      const id = String(rec.pair_id);
      counts.set(id, (counts.get(id) ?? 0) + 1);
    }
    expect(Math.max(...counts.values())).toBe(1);
    expect(submitCalls).toBe(25); // reconciliation never re-posted

    const log = readFileSync(join(workDir, 'log.jsonl'), 'utf-8')
      .split('\n')
      .filter((line) => line.length > 0)
      .map((line) => JSON.parse(line) as { type: string });
    expect(log.filter((e) => e.type === 'judgment')).toHaveLength(25);
    expect(log.filter((e) => e.type === 'description')).toHaveLength(1);
  }, 60_000);

  it('serves playable audio for the trial clips', async () => {
    const api = new CollectApi(baseUrl);
    const c = new SessionController(api);
    await c.start({
      rater_id: 'ui-audio',
      age_band: '<=20s',
      gender: 'other/unstated',
      familiarity: 'low',
    });
    const res = await fetch(api.audioUrl(c.trial!.left_audio));
    expect(res.status).toBe(200);
    expect(res.headers.get('content-type')).toBe('audio/wav');
    const bytes = new Uint8Array(await res.arrayBuffer());
    expect(bytes.length).toBeGreaterThan(44); // more than a bare WAV header
    expect(String.fromCharCode(...bytes.slice(0, 4))).toBe('RIFF');
  }, 30_000);
});
