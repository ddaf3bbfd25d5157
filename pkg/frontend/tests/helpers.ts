// Fetch mock that serves the captured API fixtures. Frames 0/1/25/50 are the
// real captured payloads; other timesteps are synthesized from frame 25 with
// the timestep patched, which is enough for playback tests.

import { vi } from 'vitest';
import type { FrameData } from '../src/api';
import frame0 from './fixtures/frame_0.json';
import frame1 from './fixtures/frame_1.json';
import frame25 from './fixtures/frame_25.json';
import frame50 from './fixtures/frame_50.json';
import prompts from './fixtures/prompts.json';
import sweep from './fixtures/sweep.json';
import trajfile from './fixtures/trajfile.json';

export const FIXTURE_FRAMES: Record<number, FrameData> = {
  0: frame0 as FrameData,
  1: frame1 as unknown as FrameData,
  25: frame25 as unknown as FrameData,
  50: frame50 as unknown as FrameData,
};

export { prompts, sweep, trajfile };

export function frameFor(t: number): FrameData {
  return FIXTURE_FRAMES[t] ?? { ...(frame25 as unknown as FrameData), timestep: t };
}

export interface FetchLogEntry {
  url: string;
  method: string;
}

export function installFetchMock(options: { failGenerate?: boolean } = {}): FetchLogEntry[] {
  const log: FetchLogEntry[] = [];

  const json = (body: unknown, status = 200) =>
    new Response(JSON.stringify(body), {
      status,
      headers: { 'content-type': 'application/json' },
    });

  vi.stubGlobal(
    'fetch',
    vi.fn(async (input: RequestInfo | URL, init?: RequestInit) => {
      const url = String(input);
      log.push({ url, method: init?.method ?? 'GET' });

      if (url.startsWith('/api/prompts')) return json(prompts);
      if (url.startsWith('/api/generate')) {
        if (options.failGenerate) return json({ error: 'injected failure' }, 500);
        return json({ trajectory_id: trajfile.id, cached: false });
      }
      if (url.includes('/file')) return json(trajfile);
      const frameMatch = url.match(/\/api\/trajectories\/[^/]+\/frames\/(\d+)/);
      if (frameMatch) return json(frameFor(Number(frameMatch[1])));
      if (url.startsWith('/api/guidance-sweep')) return json(sweep);
      return json({ error: `unmocked url ${url}` }, 404);
    }),
  );
  return log;
}

export async function settle(): Promise<void> {
  // let chained fetch handlers and microtasks drain
  for (let i = 0; i < 12; i++) await Promise.resolve();
  await new Promise((resolve) => setTimeout(resolve, 0));
}
