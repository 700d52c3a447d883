import heapq
import sys


def main():
    """
    Strategy: Use Dijkstra's algorithm to find shortest path in weighted graph...
    """
    n, m, edges, start, goal = build_graph()
    dist = dijkstra(n, edges, start)
    print(dist[goal] if dist[goal] != float("inf") else -1)


def dijkstra(n, edges, start):
    """
    Implements Dijkstra's algorithm using min-heap priority queue...
    """
    dist = [float("inf")] * n
    dist[start] = 0
    heap = [(0, start)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in edges[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def build_graph():
    """
    Build adjacency list from stdin input...
    """
    data = sys.stdin.read().split()
    it = iter(data)
    n, m = int(next(it)), int(next(it))
    edges = [[] for _ in range(n)]
    for _ in range(m):
        u, v, w = int(next(it)), int(next(it)), int(next(it))
        edges[u].append((v, w))
        edges[v].append((u, w))
    start, goal = int(next(it)), int(next(it))
    return n, m, edges, start, goal


if __name__ == "__main__":
    main()
