import { describe, expect, it } from 'vitest';
import { SyncedViewer } from '../src/viewer.js';

describe('SyncedViewer', () => {
  it('keeps the anchor point over the same model position while zooming', () => {
    const viewer = new SyncedViewer({ maxScale: 16 });
    viewer.panBy(30, -12);
    const anchor = { x: 120, y: 80 };
    const before = viewer.modelPosition(anchor);
    viewer.zoomAt(anchor, 2);
    const after = viewer.modelPosition(anchor);
    expect(after.x).toBeCloseTo(before.x, 10);
    expect(after.y).toBeCloseTo(before.y, 10);
    expect(viewer.current.scale).toBe(2);

    viewer.zoomAt({ x: 10, y: 10 }, 1.7);
    const again = viewer.modelPosition({ x: 10, y: 10 });
    viewer.zoomAt({ x: 10, y: 10 }, 1 / 1.7);
    expect(viewer.modelPosition({ x: 10, y: 10 }).x).toBeCloseTo(again.x, 10);
  });

  it('clamps the scale to its bounds', () => {
    const viewer = new SyncedViewer({ minScale: 1, maxScale: 4 });
    viewer.zoomAt({ x: 0, y: 0 }, 100);
    expect(viewer.current.scale).toBe(4);
    viewer.zoomAt({ x: 0, y: 0 }, 0.001);
    expect(viewer.current.scale).toBe(1);
  });

  it('drives every subscribed pane with one shared transform', () => {
    const viewer = new SyncedViewer();
    const panes: string[][] = [[], [], [], [], []];
    for (const log of panes) {
      viewer.subscribe((t) => log.push(`${t.scale}|${t.x}|${t.y}`));
    }
    viewer.zoomAt({ x: 50, y: 50 }, 2);
    viewer.panBy(-10, 5);
    for (const log of panes) {
      expect(log).toEqual(panes[0]);
      expect(log).toHaveLength(3); // initial snapshot + two changes
    }
  });

  it('does not notify when a change is a no-op', () => {
    const viewer = new SyncedViewer({ maxScale: 2 });
    const events: number[] = [];
    viewer.subscribe((t) => events.push(t.scale));
    viewer.zoomAt({ x: 0, y: 0 }, 2);
    viewer.zoomAt({ x: 0, y: 0 }, 2); // already at max
    viewer.panBy(0, 0);
    expect(events).toEqual([1, 2]);
  });

  it('resets to the identity transform and stops after unsubscribe', () => {
    const viewer = new SyncedViewer();
    const events: string[] = [];
    const unsubscribe = viewer.subscribe(() => events.push('tick'));
    viewer.zoomAt({ x: 5, y: 5 }, 3);
    viewer.reset();
    expect(viewer.current).toEqual({ scale: 1, x: 0, y: 0 });
    expect(viewer.cssTransform()).toBe('translate(0px, 0px) scale(1)');
    unsubscribe();
    viewer.panBy(1, 1);
    expect(events).toHaveLength(3);
  });
});
