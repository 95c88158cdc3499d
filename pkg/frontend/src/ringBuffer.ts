/** Fixed-capacity ring: pushing past capacity evicts the oldest entry.
 * Backs the live chart series so memory stays bounded no matter how long
 * the feed runs. */

export class RingBuffer<T> {
  private items: T[] = [];
  private start = 0;

  constructor(public readonly capacity: number) {
    if (capacity < 1) throw new Error("capacity must be >= 1");
  }

  get size(): number {
    return this.items.length;
  }

  push(item: T): void {
    if (this.items.length < this.capacity) {
      this.items.push(item);
      return;
    }
    this.items[this.start] = item;
    this.start = (this.start + 1) % this.capacity;
  }

  /** Oldest to newest. */
  toArray(): T[] {
    return this.items.slice(this.start).concat(this.items.slice(0, this.start));
  }

  last(): T | undefined {
    if (this.items.length === 0) return undefined;
    const index = (this.start + this.items.length - 1) % this.items.length;
    return this.items[index];
  }

  clear(): void {
    this.items = [];
    this.start = 0;
  }
}
